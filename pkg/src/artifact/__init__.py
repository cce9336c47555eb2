"""Regional image restoration with a diffusion model and a shifted-window
transformer denoiser.

Subpackage map:

- ``images``      domain-tagged image batches, boolean artifact masks, PNG I/O
- ``diffusion``   closed-form diffusion math (schedule, marginals, sampling)
- ``swin``        shifted-window attention blocks with per-block time tokens
- ``unet``        convolutional encoder/decoder baseline denoiser
- ``denoisers``   denoiser configuration, factory, parameter/FLOP accounting
- ``restoration`` masked regional denoising loop and trace recording
- ``lab``         artifact synthesis and threshold-based detection
- ``metrics``     full-reference quality metrics and report building
- ``data``        dataset ingestion and the synthetic texture corpus
- ``training``    training loop and optimizer plumbing
- ``checkpoint``  binary checkpoint serialization
- ``cli``         command-line interface
"""

__version__ = "0.1.0"
