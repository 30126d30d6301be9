"""Desk-scale PET attenuation/scatter correction lab.

Simulates paired noncorrected / corrected PET volumes from synthetic phantoms,
trains a from-scratch encoder-decoder network to map NC to ASC directly in
image space, and evaluates predictions with NRMSE / PSNR / SSIM / SUV
joint-histogram reports.
"""

__version__ = "0.1.0"
