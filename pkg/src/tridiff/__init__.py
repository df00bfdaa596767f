"""tridiff: a three-modality (human, object, interaction) diffusion model
that trains once and samples from all seven joint/conditional distributions,
with a contact-text interaction codec, contact guidance, an evaluation
metric suite, and optimization-based refinement."""

__version__ = "0.1.0"
