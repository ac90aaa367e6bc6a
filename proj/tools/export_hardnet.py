#!/usr/bin/env python3
"""Convert a published HardNet checkpoint into the TorchScript module read by
features.descriptor_weights.

    python3 tools/export_hardnet.py checkpoint_liberty_with_aug.pth hardnet.pt

The module takes [N,1,32,32] float patches and returns [N,128] unit vectors.
Without a checkpoint (--random) the weights stay at their initial values,
which is only useful for exercising the loading path.
"""

import argparse

import torch
from torch import nn


def conv(cin, cout, stride=1):
    return [nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
            nn.BatchNorm2d(cout, affine=False), nn.ReLU()]


class HardNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            *conv(1, 32), *conv(32, 32),
            *conv(32, 64, 2), *conv(64, 64),
            *conv(64, 128, 2), *conv(128, 128),
            nn.Dropout(0.3),
            nn.Conv2d(128, 128, 8, bias=False),
            nn.BatchNorm2d(128, affine=False),
        )

    def forward(self, x):
        flat = x.view(x.size(0), -1)
        mean = flat.mean(dim=1).view(-1, 1, 1, 1)
        std = flat.std(dim=1).view(-1, 1, 1, 1) + 1e-7
        y = self.features((x - mean) / std).view(x.size(0), -1)
        return y / (y.norm(dim=1, keepdim=True) + 1e-10)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("checkpoint", nargs="?", help="state dict (.pth) of the published model")
    parser.add_argument("output", help="TorchScript file to write")
    parser.add_argument("--random", action="store_true", help="export untrained weights")
    args = parser.parse_args()
    if not args.checkpoint and not args.random:
        parser.error("give a checkpoint or --random")

    model = HardNet()
    if args.checkpoint:
        state = torch.load(args.checkpoint, map_location="cpu")
        state = state.get("state_dict", state)
        model.load_state_dict(state)
    model.eval()

    scripted = torch.jit.trace(model, torch.rand(2, 1, 32, 32))
    out = scripted(torch.rand(4, 1, 32, 32))
    assert out.shape == (4, 128)
    scripted.save(args.output)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
