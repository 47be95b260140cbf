"""Hash-encoded parameter fields and degree-2 spherical-harmonic shading.

Run: python demos/fields_and_shading.py
"""

import numpy as np

from animgs.fields import FieldBank, FieldConfig, HashGrid, HashGridConfig
from animgs.shading import eval_sh, sh_basis

rng = np.random.default_rng(0)

# A small multiresolution grid: the coarse levels index a dense array, the
# fine ones hash into a fixed-size table.
grid = HashGrid(HashGridConfig(levels=6, base_resolution=4, max_resolution=128, table_size=2 ** 12,
                               init_range=0.5, dtype="float64"), rng)
print("level resolutions:", grid.config.resolutions())
pts = rng.random((5, 3))
feats, _ = grid.encode(pts)
print("encoded feature width:", feats.shape[1])

# Nearby points get nearby features because each level interpolates trilinearly.
a, _ = grid.encode(np.array([[0.3, 0.3, 0.3]]))
b, _ = grid.encode(np.array([[0.3001, 0.3, 0.3]]))
print("feature change for a 1e-4 step:", float(np.abs(a - b).max()))

# The field bank decodes SH coefficients, a bounded displacement and an
# ambient-occlusion factor that also depends on time.
bank = FieldBank(np.zeros(3), np.ones(3), FieldConfig(), seed=1)
sh, dx, _ = bank.sample_shape_appearance(pts)
ao, _ = bank.sample_ao(pts, 0.25)
print("SH shape:", sh.shape, "max |dx|:", float(np.abs(dx).max()), "AO at init:", np.round(ao, 3))

# Shading: only the DC band contributes for a fresh field; add a view-dependent
# band and the color changes with direction.
coeffs = np.zeros((9, 3))
coeffs[0] = [0.8, 0.4, 0.2]
coeffs[3] = [0.3, 0.0, -0.3]
for d in ([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]):
    d = np.array(d)
    print("direction", d, "->", np.round(eval_sh(coeffs, d), 4))
print("basis at +z:", np.round(sh_basis(np.array([0.0, 0.0, 1.0])), 4))
