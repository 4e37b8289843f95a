"""Zero-shot IoT device fingerprinting toolkit.

Pipeline: ingest packet traces, train a self-attention feature extractor on
seen devices, derive per-device attribute vectors, train a conditional VAE to
synthesize pseudo latents for all devices, and classify seen and unseen
devices with a linear SVM. Clustering baselines (VAE-K, SeqCR, SeqCS, DEFT)
run over the same extracted features.
"""

__version__ = "0.1.0"
