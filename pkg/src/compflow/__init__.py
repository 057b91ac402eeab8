"""Composite flow matching for reinforcement learning with shifted-dynamics data.

Submodules
----------
nnet     dense networks with explicit backprop and an Adam optimizer
ot       minibatch optimal transport (exact + entropic) and pair sampling
flow     conditional flow matching, Euler ODE integration, flow training
gap      Monte-Carlo Wasserstein dynamics-gap estimation and filtering
envs     simulated environment pairs with controllable dynamics shift
agent    soft actor-critic with gap-filtered offline data and BC regularization
persist  config, dataset/metrics/checkpoint I/O, run directories, SVG plots
cli      command-line orchestration of each pipeline stage
"""

__version__ = "0.1.0"
