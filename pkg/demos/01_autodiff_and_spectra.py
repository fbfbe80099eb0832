# Tape autodiff, the 2-D DFT and the frequency loss, poked at by hand.
import numpy as np

from reettt import functional as F
from reettt.gradcheck import gradcheck
from reettt.losses import LossConfig, focal_weight, hffl, mae_weight
from reettt.tensor import Tensor

rng = np.random.default_rng(0)

# a conv -> gelu -> sum chain, differentiated and checked against central differences
x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
print("conv chain grad rel err:", gradcheck(lambda a, b: F.gelu(F.conv2d(a, b)).sum(), [x, k]))

# the DFT agrees with numpy's FFT and keeps energy (Parseval)
field = rng.uniform(0, 1, (8, 8))
re, im = F.dft2(Tensor(field))
print("max |dft2 - fft2|:", np.abs(re.data + 1j * im.data - np.fft.fft2(field)).max())
print("energy ratio:", (re.data ** 2 + im.data ** 2).sum() / 64 / (field ** 2).sum())

# the intensity weight saturates at the cap well before 70 dBZ
for dbz in (0, 16, 24, 40, 70):
    print(f"w({dbz:2d} dBZ) = {float(mae_weight(dbz)):6.2f}")

# blurred forecast vs sharp target: the frequency loss sees what the blur removed
target = np.zeros((16, 16))
target[6:10, 6:10] = 1.0
blur = np.ones((3, 3)) / 9
pad = np.pad(target, 1)
pred = sum(pad[i:i + 16, j:j + 16] * blur[i, j] for i in range(3) for j in range(3))
for mask in ("all", "radial", "both"):
    print(f"hffl mask={mask:6s}:", hffl(pred, target, LossConfig(mask=mask)).item())
coef = focal_weight(pred, target)
print("focal coefficient nonzero bins:", int((coef > 0).sum()), "of", coef.size)
