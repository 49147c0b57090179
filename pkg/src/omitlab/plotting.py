"""Optional quick-look figures next to the CSV outputs.

matplotlib is imported lazily so the numerical core has no graphics dependency;
install the ``plot`` extra to use these.
"""

from .errors import DomainError


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise DomainError("figures need matplotlib (pip install 'omitlab[plot]')", field="figure") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def spectrum_figure(path, freq_hz, modulus, phase):
    plt = _pyplot()
    fig, (ax_p, ax_m) = plt.subplots(2, 1, sharex=True, figsize=(6, 6))
    ax_p.plot(freq_hz / 1e3, phase)
    ax_p.set_ylabel("beat phase (rad)")
    ax_m.plot(freq_hz / 1e3, modulus)
    ax_m.set_ylabel("|A_beat| (arb.)")
    ax_m.set_xlabel("Omega / 2pi (kHz)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def dispersion_figure(path, z0, delta_omega, slope):
    plt = _pyplot()
    fig, (ax_d, ax_s) = plt.subplots(2, 1, sharex=True, figsize=(6, 6))
    ax_d.plot(z0 * 1e9, delta_omega)
    ax_d.set_ylabel("delta omega (rad/s)")
    ax_s.plot(z0 * 1e9, slope)
    ax_s.set_ylabel("d omega / d z0 (rad/(s m))")
    ax_s.set_xlabel("z0 (nm)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def oracle_figure(path, freq_hz, analytic, numeric):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(freq_hz / 1e3, abs(analytic), label="frequency domain")
    ax.plot(freq_hz / 1e3, abs(numeric), "o", label="time domain")
    ax.set_xlabel("Omega / 2pi (kHz)")
    ax.set_ylabel("|A_beat|")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
