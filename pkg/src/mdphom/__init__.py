"""Learning quotient MDPs from experience with MDP homomorphisms."""
__version__ = "0.1.0"
