"""Turn tri-planar nodule montage images into deep appearance features.

Feeds each ``<id>_rgb.png`` through a five-conv / three-FC classification
network and records the activations of the first fully-connected layer
(4096 wide) as one CSV row ``id,v0,...`` — the feature-CSV contract of the
nodule pipeline.

Weights: pass ``--weights checkpoint.pth`` to use a pretrained state dict.
Without one, the network is initialized from a fixed seed instead — random
convolutional features are deterministic and keep the full contract
(dimension, determinism, CSV grammar), just without ImageNet semantics; the
run metadata records which variant produced the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models, transforms

EXPECTED_DIM = 4096
DEFAULT_LAYER = "classifier.1"  # first fully-connected layer
INPUT_SIZE = 224
# published preprocessing of the torchvision ImageNet models
NORM_MEAN = (0.485, 0.456, 0.406)
NORM_STD = (0.229, 0.224, 0.225)


def build_model(weights_path: str | None, seed: int) -> torch.nn.Module:
    if weights_path:
        model = models.alexnet(weights=None)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    else:
        torch.manual_seed(seed)
        model = models.alexnet(weights=None)
    model.eval()
    return model


def find_layer(model: torch.nn.Module, name: str) -> torch.nn.Module:
    for module_name, module in model.named_modules():
        if module_name == name:
            return module
    raise KeyError(f"layer {name!r} not found; available: "
                   f"{[n for n, _ in model.named_modules() if n]}")


_PREPROCESS = transforms.Compose([
    transforms.Resize(256),
    transforms.CenterCrop(INPUT_SIZE),
    transforms.ToTensor(),
    transforms.Normalize(mean=NORM_MEAN, std=NORM_STD),
])


def load_image(path: Path) -> torch.Tensor:
    with Image.open(path) as img:
        return _PREPROCESS(img.convert("RGB"))


def extract_features(images_dir: str | Path, layer_name: str = DEFAULT_LAYER,
                     weights: str | None = None, seed: int = 0,
                     batch_size: int = 8) -> tuple[dict[str, np.ndarray], int]:
    """Activations of the named layer for every ``*_rgb.png`` image.

    Returns (features by id, number of skipped images).
    """
    images_dir = Path(images_dir)
    paths = sorted(images_dir.glob("*_rgb.png"))
    model = build_model(weights, seed)
    layer = find_layer(model, layer_name)
    captured: list[torch.Tensor] = []

    def hook(_module, _inputs, output):
        captured.append(output.detach())

    handle = layer.register_forward_hook(hook)
    features: dict[str, np.ndarray] = {}
    skipped = 0
    try:
        batch_ids: list[str] = []
        batch_imgs: list[torch.Tensor] = []

        def flush():
            if not batch_ids:
                return
            captured.clear()
            with torch.no_grad():
                model(torch.stack(batch_imgs))
            acts = captured[0].reshape(len(batch_ids), -1).numpy().astype(np.float64)
            for rec_id, vec in zip(batch_ids, acts):
                features[rec_id] = vec
            batch_ids.clear()
            batch_imgs.clear()

        for path in paths:
            rec_id = path.name[: -len("_rgb.png")]
            try:
                img = load_image(path)
            except OSError as exc:
                print(f"warning: skipping {path}: {exc}", file=sys.stderr)
                skipped += 1
                continue
            batch_ids.append(rec_id)
            batch_imgs.append(img)
            if len(batch_ids) >= batch_size:
                flush()
        flush()
    finally:
        handle.remove()
    return features, skipped


def write_features_csv(features: dict[str, np.ndarray], path: str | Path) -> None:
    """Header-free ``id,v0,...`` rows, 9 significant digits, LF endings."""
    with open(path, "w", newline="") as fh:
        for rec_id in features:
            values = ",".join(f"{v:.9g}" for v in features[rec_id])
            fh.write(f"{rec_id},{values}\n")


def write_metadata(path: str | Path, args, n_rows: int, skipped: int, dim: int
                   ) -> None:
    meta = {
        "layer": args.layer,
        "dim": dim,
        "rows": n_rows,
        "skipped": skipped,
        "weights": args.weights or f"random-init(seed={args.seed})",
        "preprocessing": f"resize 256, center crop {INPUT_SIZE}, "
                         f"scale to [0,1], normalize mean={NORM_MEAN} std={NORM_STD}",
    }
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nodule-dcnn-extract",
        description="montage images -> first-FC-layer appearance features CSV")
    parser.add_argument("--images-dir", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--layer", default=DEFAULT_LAYER)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--weights", help="pretrained state-dict file (optional)")
    parser.add_argument("--seed", type=int, default=0,
                        help="init seed when no weights file is given")
    parser.add_argument("--expected-dim", type=int, default=EXPECTED_DIM)
    args = parser.parse_args(argv)

    try:
        features, skipped = extract_features(
            args.images_dir, args.layer, args.weights, args.seed, args.batch_size)
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not features:
        print("error: no images processed", file=sys.stderr)
        return 2
    dim = len(next(iter(features.values())))
    if dim != args.expected_dim:
        print(f"error: layer {args.layer!r} produced {dim}-wide rows, "
              f"expected {args.expected_dim}", file=sys.stderr)
        return 2
    write_features_csv(features, args.out)
    write_metadata(str(args.out) + ".meta.json", args, len(features), skipped, dim)
    print(f"extracted {len(features)} rows ({dim} values each), "
          f"{skipped} skipped -> {args.out}", file=sys.stderr)
    return 0 if skipped == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
