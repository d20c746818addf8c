"""Services package for HybridTrap.

This package contains service modules for:
- constants / errors: Physical constants, unit helpers and the exception hierarchy
- params: Derived physical parameters from the input specs
- dynamics / ensemble: Stochastic integration of single trajectories and seeded ensembles
- linear_model: Closed forms about a trapped well (couplings, cooling rate, secular frequency)
- spectral: Heterodyne synthesis, PSDs, spectrograms, peak classification and decay fits
- inference: Photon number, charge and cooling rate from measured spectra
- config_loader / artifacts: TOML configs, presets, overrides and atomic artifact I/O
- sweep / runner: Pressure and well ladders and per-subcommand orchestration
"""
