"""Multi-task latent diffusion precipitation nowcasting."""

__version__ = "0.1.0"
