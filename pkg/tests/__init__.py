"""Test package for HybridTrap.

This package contains test modules for:
- test_params / test_linear_model: derived parameters and closed forms about a well
- test_dynamics: the stochastic integrator and seeded ensembles
- test_spectral / test_inference: spectra, peak classification, decay fits and inversion
- test_config_loader / test_artifacts / test_sweep / test_main: configs, files, ladders and the CLI
"""
