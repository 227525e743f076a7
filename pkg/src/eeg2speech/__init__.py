"""End-to-end reconstruction of listened speech waveforms from EEG signals."""

__version__ = "0.1.0"
