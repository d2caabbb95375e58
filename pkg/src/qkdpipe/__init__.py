"""Two-party decoy-state BB84 post-processing engine with a simulated optical layer.

Subsystems: seedable entropy with bias correction and self-tests, a Monte
Carlo photon channel, sync-frame coding, basis sifting, Hamming-syndrome
reconciliation, Toeplitz privacy amplification, and a two-endpoint session
driver with loopback and TCP transports.
"""

__version__ = "0.1.0"
