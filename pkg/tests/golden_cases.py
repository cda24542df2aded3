"""Fixed-seed cases whose outputs are frozen under tests/golden/.

Regenerate (only after an intentional numerical change) with
``python tests/golden_cases.py``.
"""

from pathlib import Path

import numpy as np

from pfan.fusion import TSAFusion
from pfan.pyramid import Encoder, ShallowExtractor
from pfan.tensor import Tensor, no_grad

GOLDEN = Path(__file__).parent / "golden"


def shallow_case():
    net = ShallowExtractor(4, np.random.default_rng(0))
    x = np.random.default_rng(1).uniform(0, 1, size=(1, 3, 8, 8)).astype(np.float32)
    return net(Tensor(x)).data


def encoder_case():
    rng = np.random.default_rng(2)
    enc = Encoder(6, 4, blocks=2, rng=rng)
    data = np.random.default_rng(3)
    shallow = data.normal(size=(1, 6, 4, 4)).astype(np.float32)
    finer = data.normal(size=(1, 4, 8, 8)).astype(np.float32)
    return enc(Tensor(shallow), Tensor(finer)).data


def tsa_case():
    fusion = TSAFusion(4, 3, np.random.default_rng(4))
    data = np.random.default_rng(5)
    feats = [Tensor(data.normal(size=(1, 4, 6, 6)).astype(np.float32)) for _ in range(3)]
    return fusion(feats, 1).data


CASES = {"shallow": shallow_case, "encoder": encoder_case, "tsa": tsa_case}


def regenerate():
    GOLDEN.mkdir(exist_ok=True)
    with no_grad():
        for name, fn in CASES.items():
            np.save(GOLDEN / f"{name}.npy", fn())


if __name__ == "__main__":
    regenerate()
