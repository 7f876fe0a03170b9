"""
Variational particle flows: EDH, Gaussian and mixture Fisher-Rao flows, Gauss-Hermite transport
and a particle-flow-based normalizing flow.
"""
