"""Regenerate the frozen test assets. Run from the repo root:

    python tests/assets/make_assets.py
"""

from pathlib import Path

from autojoin.data import SyntheticSpec, generate_synthetic
from autojoin.trainer import DESK_PRESET, save_model, train, with_overrides

HERE = Path(__file__).resolve().parent


def desk_checkpoint():
    ds = generate_synthetic(SyntheticSpec(count=400, seed=11))
    config = with_overrides(DESK_PRESET, variant="standard", epochs=8, seed=11)
    result = train(config, ds)
    save_model(result.predictor, HERE / "desk_standard.json", config, include_decoder=False)


if __name__ == "__main__":
    desk_checkpoint()
