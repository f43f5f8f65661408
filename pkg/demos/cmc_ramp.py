"""Current-mode control: critical duty against ramp slope.

For each ramp slope the peak-current reference is chosen so the
converter sits at the critical duty predicted by the closed form; the
exact harmonic-balance fold is printed next to it.
"""

from snblab import critical
from snblab.converter import CMC, ConverterSpec

T, L, R, C, v_s = 10e-6, 100e-6, 40.0, 100e-6, 10.0

print(" m_a [V/s]   closed form   exact series")
for m_a in (0.0, 2e3, 5e3, 1e4, 1.5e4):
    K = 2 * L / (R * T)
    D = (K + 1) / 2 + L * m_a / v_s
    if D >= 1:
        print(f"{m_a:10.0f}   {D:.4f}        no fold below D = 1")
        continue
    # peak-current reference that puts the steady state at duty D
    i_c = D * v_s / R + v_s * (1 - D) * D * T / (2 * L) + m_a * T * D
    spec = ConverterSpec(v_s=v_s, R=R, L=L, C=C, T=T, V_m=m_a * T, v_r=i_c, scheme=CMC())
    sols = critical.find_snb(spec)
    exact = f"{sols[0].D_star:.4f}" if sols else "none"
    print(f"{m_a:10.0f}   {critical.closed_form_cmc(spec):.4f}        {exact}")
