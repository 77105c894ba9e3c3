"""Software HFO detection pipeline: band-pass filtering, delta-modulation
spike encoding, a mismatch-sampled spiking network and clinical analytics."""

__version__ = "0.1.0"
