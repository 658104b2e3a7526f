"""Dressed decay, Lamb shift and far-field squeezing for one emitter near gold.

Run:  python3 demos/dressed_emitter.py
"""

import numpy as np

from nanosqueeze import emitter as em
from nanosqueeze import squeeze as sq
from nanosqueeze.green import SphereSystem

R, s, lam = 60.0, 10.0, 550.0
sphere = SphereSystem(R)
e = em.Emitter.on_axis(R, s, lam)

d = em.dressed_rates(e, sphere)
print(f"gamma/gamma0     = {d.purcell:8.2f}")
print(f"shift/gamma0     = {d.shift_over_gamma0:8.2f}  (red shift)")
print(f"|Omega/Omega0|   = {abs(d.rabi_enhancement):8.3f}")

# far-field amplitude at D1, compared with the same dipole in free space
r = sq.detection_point("D1", R, lam)
amp = sq.field_amplitude(e, sphere, r)
ref = sq.field_amplitude(e, sphere.free_space(), r)
print(f"|g_theta/g_theta0|^2 = {abs(amp.complex[1] / ref.complex[1])**2:.2f}")

# on resonance the atomic variance bottoms out at -1/8 for z^2 = 1/3
z = np.sqrt(1 / 3)
state = em.bloch_steady_state(0.0, z, 0.0)
v = sq.field_variance(amp, state, 0.0, z, 0.0, reference=ref)
print(f"normalized theta variance = {v.normalized[1]:.3f}")

# z is measured against the dressed decay rate, which grows faster than the Rabi
# enhancement, so the bare laser has to be stronger to reach the same z
print(f"Omega0/gamma0 needed: {z * d.purcell / abs(d.rabi_enhancement):.2f} (sphere) vs {z:.2f} (free space)")
