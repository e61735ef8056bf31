"""Protocol-agnostic RF device fingerprinting on raw I/Q captures.

Complex-valued convolutional and recurrent classifiers trained directly
on I/Q sample windows, with the full supporting pipeline: SigMF capture
I/O, DSP preprocessing and augmentation, a synthetic impaired-transmitter
generator for end-to-end verification, and a train/eval/fingerprint CLI.
"""

__version__ = "0.1.0"
