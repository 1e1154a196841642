"""Semi-supervised deep reinforcement learning for RSSI grid localisation.

A DQN agent walks a grid toward the cell a fingerprint was taken in. Labeled
fingerprints supply the goal directly; unlabeled ones are pseudo-labeled by a
semi-supervised VAE classifier whose hidden layer the Q-network reuses.
"""
__version__ = "0.1.0"
