"""Scattering theory for finite perturbations of regular trees."""
