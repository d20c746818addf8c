"""Closed-form figure checker for the shipped HybridTrap presets.

Evaluates each figure preset without running the integrator and logs the
numbers the presets are meant to reproduce: couplings, cooling rate,
steady-state temperature and secular frequency.
"""

import math

from loguru import logger


def check_presets() -> list[dict[str, str | float | int]]:
    """Evaluate the closed forms for every figure preset.

    Returns:
    - One dictionary per preset with its well index, frequencies, couplings,
      cooling rates and steady state.
    """
    # lazy import to keep ``--help``-style invocations cheap
    from src.services.config_loader import provide_figure_presets  # noqa: PLC0415
    from src.services.constants import TWO_PI  # noqa: PLC0415
    from src.services.linear_model import linearize_at, secular_frequency  # noqa: PLC0415
    from src.services.params import derive_from_config  # noqa: PLC0415
    from src.services.sweep import predict_point  # noqa: PLC0415

    results: list[dict[str, str | float | int]] = []
    for name, config in provide_figure_presets().items():
        params = derive_from_config(config)
        centre = linearize_at(0.0, params, config.paul)
        prediction = predict_point(config)
        results.append(
            {
                "preset": name,
                "well_index": config.well_index,
                "omega_M_hz": params.omega_M / TWO_PI,
                "omega_s_hz": secular_frequency(params, config.paul, params.photon_n) / TWO_PI,
                "g1_hz": centre.g1_single / TWO_PI,
                "g2_hz": centre.g2_single / TWO_PI,
                "gamma_M": prediction.gamma_M,
                "gamma_opt_cycle": prediction.gamma_opt_cycle,
                "t_eff_k": prediction.t_eff,
                "n_p": prediction.n_p,
            },
        )
    return results


def main() -> None:
    """Run the preset checks and display results."""
    for result in check_presets():
        logger.info("{} (N = {})", result["preset"], result["well_index"])
        logger.info(
            "ω_M/2π = {:.4g} Hz, ω_s/2π = {:.4g} Hz, g1/2π = {:.3g} Hz, g2/2π = {:.3g} Hz",
            result["omega_M_hz"],
            result["omega_s_hz"],
            result["g1_hz"],
            result["g2_hz"],
        )
        n_p = result["n_p"]
        logger.info(
            "γ_M = {:.4g} s⁻¹, Γ_opt (cycle) = {:.4g} s⁻¹, T_eff = {:.4g} K, n_p = {}",
            result["gamma_M"],
            result["gamma_opt_cycle"],
            result["t_eff_k"],
            "n/a" if isinstance(n_p, float) and math.isnan(n_p) else f"{n_p:.4g}",
        )
        logger.info("---")


if __name__ == "__main__":
    main()
