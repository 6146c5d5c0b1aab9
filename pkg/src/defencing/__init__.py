"""Multi-frame image de-fencing toolkit.

Detects fence occlusions (oriented Gabor filtering or a HOG + RBF-SVM
sliding window), estimates inter-frame motion (global shift or pyramidal
dense flow), and reconstructs the occlusion-free image by split Bregman
minimization of a TV-regularized multi-frame data term.
"""

__version__ = "0.1.0"
