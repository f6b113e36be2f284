"""Label-free indoor trajectory recovery and radio mapping from multi-AP CSI.

Modules: ``sim`` (synthetic scenes and datasets), ``features`` (PADP, RSS,
MUSIC bearings), ``graph`` (walkable-area graph), ``inference`` (regularized
Viterbi and alternating parameter fits), ``radiomap``, ``evaluation`` and
``cli``.
"""

__version__ = "0.1.0"
