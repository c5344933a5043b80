#!/usr/bin/env python3
"""Convert VGG-16 convolution weights into an fdbstyle archive.

The archive keeps torchvision's parameter names (features.0.weight ...
features.28.bias), which is what the loss network loads. Sources:

  --torchvision          ImageNet weights through torchvision (downloads them)
  --state-dict FILE      a saved torchvision VGG-16 state dict (.pth)
  --npz FILE             arrays named like the state dict keys
  --random-seed N        torchvision's default initialisation, for tests
"""

import argparse
import json
import struct
import sys

import numpy as np

MAGIC = b"FDBARC01"
CONV_INDICES = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28]
CHANNELS = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]


def expected_shapes():
    shapes = {}
    in_ch = 3
    for idx, out_ch in zip(CONV_INDICES, CHANNELS):
        shapes[f"features.{idx}.weight"] = (out_ch, in_ch, 3, 3)
        shapes[f"features.{idx}.bias"] = (out_ch,)
        in_ch = out_ch
    return shapes


def from_torch_state(state):
    return {k: v.detach().cpu().numpy() for k, v in state.items() if k.startswith("features.")}


def load_source(args):
    if args.npz:
        with np.load(args.npz) as data:
            return {k: data[k] for k in data.files}, f"npz:{args.npz}"
    import torch
    import torchvision

    if args.state_dict:
        return from_torch_state(torch.load(args.state_dict, map_location="cpu")), f"state_dict:{args.state_dict}"
    if args.torchvision:
        weights = torchvision.models.VGG16_Weights.IMAGENET1K_V1
        return from_torch_state(torchvision.models.vgg16(weights=weights).state_dict()), "torchvision:IMAGENET1K_V1"
    torch.manual_seed(args.random_seed)
    return from_torch_state(torchvision.models.vgg16(weights=None).state_dict()), f"torchvision-random:{args.random_seed}"


def write_archive(path, tensors, meta):
    entries, offset = [], 0
    for name, array in tensors:
        entries.append({"name": name, "shape": list(array.shape), "offset": offset})
        offset += array.size
    header = json.dumps({"meta": meta, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<Q", len(header)))
        out.write(header)
        for _, array in tensors:
            out.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def convert(state, origin, output):
    tensors = []
    for name, shape in expected_shapes().items():
        if name not in state:
            raise ValueError(f"{origin}: missing {name}")
        array = np.asarray(state[name], dtype=np.float32)
        if array.shape != shape:
            raise ValueError(f"{origin}: {name} has shape {array.shape}, expected {shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError(f"{origin}: {name} contains non-finite values")
        tensors.append((name, array))
    write_archive(output, tensors, {"network": "vgg16", "source": origin})


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--torchvision", action="store_true")
    source.add_argument("--state-dict")
    source.add_argument("--npz")
    source.add_argument("--random-seed", type=int)
    parser.add_argument("output", help="archive to write, e.g. vgg16.fdbarc")
    args = parser.parse_args(argv)
    try:
        state, origin = load_source(args)
        convert(state, origin, args.output)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    print(f"wrote {args.output} ({origin})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
