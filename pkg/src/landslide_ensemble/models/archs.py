"""Nine reduced-width fully-convolutional segmentation networks.

Each class keeps the defining mechanism of its family (skip concatenation,
nested skips, attention, additive fusion, pyramids, dilated ASPP) on top of a
shared residual encoder. All convolutions use replicate padding and all
upsampling is interpolation, so a spatially constant input yields a spatially
constant output.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

PAD_MODE = "replicate"


def conv_bn_relu(cin: int, cout: int, k: int = 3, dilation: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, padding=dilation * (k // 2), dilation=dilation, bias=False, padding_mode=PAD_MODE),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(conv_bn_relu(cin, cout), conv_bn_relu(cout, cout))


def upsample_to(x: torch.Tensor, ref: torch.Tensor | tuple[int, int], mode: str = "bilinear") -> torch.Tensor:
    size = ref if isinstance(ref, tuple) else ref.shape[-2:]
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    if mode == "nearest":
        return F.interpolate(x, size=size, mode="nearest")
    return F.interpolate(x, size=size, mode=mode, align_corners=False)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, dilation: int = 1):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=dilation, dilation=dilation, bias=False, padding_mode=PAD_MODE),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=dilation, dilation=dilation, bias=False, padding_mode=PAD_MODE),
            nn.BatchNorm2d(cout),
        )
        self.skip = (
            nn.Identity()
            if cin == cout
            else nn.Sequential(nn.Conv2d(cin, cout, 1, bias=False), nn.BatchNorm2d(cout))
        )

    def forward(self, x):
        return F.relu(self.body(x) + self.skip(x))


class Encoder(nn.Module):
    """Residual encoder returning features at strides 1, 2, ..., 2**depth.

    With ``output_stride`` set, stages past that stride keep resolution and
    grow their dilation instead of pooling.
    """

    def __init__(self, in_channels: int, width: int, depth: int, output_stride: int | None = None):
        super().__init__()
        self.channels = [width * 2**i for i in range(depth + 1)]
        self.stem = conv_bn_relu(in_channels, width)
        self.stages = nn.ModuleList()
        self.pool = []
        stride, dilation = 1, 1
        for i in range(1, depth + 1):
            if output_stride is not None and stride >= output_stride:
                dilation *= 2
                self.pool.append(False)
            else:
                stride *= 2
                self.pool.append(True)
            self.stages.append(ResBlock(self.channels[i - 1], self.channels[i], dilation=dilation))

    def forward(self, x):
        feats = [self.stem(x)]
        for pool, stage in zip(self.pool, self.stages):
            h = feats[-1]
            if pool:
                h = F.max_pool2d(h, 2)
            feats.append(stage(h))
        return feats


class SegNet(nn.Module):
    """Base class: validates the input contract and owns the encoder."""

    output_stride: int | None = None

    def __init__(self, in_channels: int, width: int = 16, depth: int = 4):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.in_channels = in_channels
        self.width = width
        self.depth = depth
        self.encoder = Encoder(in_channels, width, depth, self.output_stride)
        self.build_decoder(self.encoder.channels)

    def build_decoder(self, ch: list[int]) -> None:  # pragma: no cover - abstract
        raise NotImplementedError

    def decode(self, feats: list[torch.Tensor], size: tuple[int, int]) -> torch.Tensor:  # pragma: no cover
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ValueError(f"expected (N, C, H, W) input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise ValueError(f"channel mismatch: model built for {self.in_channels}, input has {x.shape[1]}")
        h, w = x.shape[-2:]
        m = 2**self.depth
        if h % m or w % m:
            raise ValueError(f"spatial size {h}x{w} not divisible by 2**depth = {m}")
        return self.decode(self.encoder(x), (h, w))


class Unet(SegNet):
    def build_decoder(self, ch):
        self.blocks = nn.ModuleList(double_conv(ch[i + 1] + ch[i], ch[i]) for i in range(self.depth))
        self.head = nn.Conv2d(ch[0], 1, 1)

    def decode(self, feats, size):
        x = feats[-1]
        for i in reversed(range(self.depth)):
            x = self.blocks[i](torch.cat([upsample_to(x, feats[i], "nearest"), feats[i]], 1))
        return self.head(x)


class UnetPP(SegNet):
    """Nested dense skips: node (i, j) sees every earlier node of its level."""

    def build_decoder(self, ch):
        self.nodes = nn.ModuleDict()
        for j in range(1, self.depth + 1):
            for i in range(self.depth - j + 1):
                cin = ch[i] * j + ch[i + 1]
                self.nodes[f"{i}_{j}"] = double_conv(cin, ch[i]) if i == 0 and j == self.depth else conv_bn_relu(cin, ch[i])
        self.head = nn.Conv2d(ch[0], 1, 1)

    def decode(self, feats, size):
        grid = {(i, 0): f for i, f in enumerate(feats)}
        for j in range(1, self.depth + 1):
            for i in range(self.depth - j + 1):
                prev = [grid[(i, k)] for k in range(j)]
                up = upsample_to(grid[(i + 1, j - 1)], feats[i], "nearest")
                grid[(i, j)] = self.nodes[f"{i}_{j}"](torch.cat(prev + [up], 1))
        return self.head(grid[(0, self.depth)])


class PositionAttention(nn.Module):
    """Self-attention over spatial positions (position-wise attention block)."""

    def __init__(self, c: int):
        super().__init__()
        r = max(c // 8, 1)
        self.q = nn.Conv2d(c, r, 1)
        self.k = nn.Conv2d(c, r, 1)
        self.v = nn.Conv2d(c, c, 1)
        self.gamma = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        n, c, h, w = x.shape
        q = self.q(x).flatten(2).transpose(1, 2)
        k = self.k(x).flatten(2)
        attn = torch.softmax(torch.bmm(q, k) / q.shape[-1] ** 0.5, dim=-1)
        v = self.v(x).flatten(2)
        out = torch.bmm(v, attn.transpose(1, 2)).view(n, c, h, w)
        return x + self.gamma * out


class ChannelGate(nn.Module):
    def __init__(self, c: int, reduction: int = 4):
        super().__init__()
        r = max(c // reduction, 1)
        self.fc = nn.Sequential(nn.Conv2d(c, r, 1), nn.ReLU(inplace=True), nn.Conv2d(r, c, 1), nn.Sigmoid())

    def forward(self, x):
        return x * self.fc(F.adaptive_avg_pool2d(x, 1))


class MultiScaleFusion(nn.Module):
    """Decoder block gating both the upsampled and the skip path by channel attention."""

    def __init__(self, c_high: int, c_skip: int, cout: int):
        super().__init__()
        self.high = nn.Sequential(conv_bn_relu(c_high, c_high), ChannelGate(c_high))
        self.skip = ChannelGate(c_skip)
        self.fuse = double_conv(c_high + c_skip, cout)

    def forward(self, x, skip):
        x = upsample_to(self.high(x), skip, "nearest")
        return self.fuse(torch.cat([x, self.skip(skip)], 1))


class MANet(SegNet):
    def build_decoder(self, ch):
        self.pab = PositionAttention(ch[-1])
        self.blocks = nn.ModuleList(MultiScaleFusion(ch[i + 1], ch[i], ch[i]) for i in range(self.depth))
        self.head = nn.Conv2d(ch[0], 1, 1)

    def decode(self, feats, size):
        x = self.pab(feats[-1])
        for i in reversed(range(self.depth)):
            x = self.blocks[i](x, feats[i])
        return self.head(x)


class LinkDecoder(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        mid = max(cin // 4, 1)
        self.reduce = conv_bn_relu(cin, mid, k=1)
        self.conv = conv_bn_relu(mid, mid)
        self.expand = conv_bn_relu(mid, cout, k=1)

    def forward(self, x, ref):
        return self.expand(self.conv(upsample_to(self.reduce(x), ref, "nearest")))


class Linknet(SegNet):
    """Decoder outputs are added to the encoder skips, not concatenated."""

    def build_decoder(self, ch):
        self.blocks = nn.ModuleList(LinkDecoder(ch[i + 1], ch[i]) for i in range(self.depth))
        self.final = conv_bn_relu(ch[0], ch[0])
        self.head = nn.Conv2d(ch[0], 1, 1)

    def decode(self, feats, size):
        x = feats[-1]
        for i in reversed(range(self.depth)):
            x = self.blocks[i](x, feats[i]) + feats[i]
        return self.head(self.final(x))


class FPN(SegNet):
    """Top-down pyramid with lateral 1x1 connections, merged at stride 2."""

    def build_decoder(self, ch):
        pc = 2 * self.width
        self.lateral = nn.ModuleList(nn.Conv2d(ch[i], pc, 1) for i in range(1, self.depth + 1))
        self.seg = nn.ModuleList(conv_bn_relu(pc, pc) for _ in range(self.depth))
        self.merge = conv_bn_relu(pc, pc)
        self.head = nn.Conv2d(pc, 1, 1)

    def decode(self, feats, size):
        levels = feats[1:]
        p = self.lateral[-1](levels[-1])
        pyramid = [p]
        for i in reversed(range(len(levels) - 1)):
            p = self.lateral[i](levels[i]) + upsample_to(p, levels[i], "nearest")
            pyramid.insert(0, p)
        target = levels[0]
        merged = sum(upsample_to(self.seg[i](q), target) for i, q in enumerate(pyramid))
        return upsample_to(self.head(self.merge(merged)), size)


class PyramidPooling(nn.Module):
    def __init__(self, cin: int, bins=(1, 2, 3, 6)):
        super().__init__()
        self.bins = bins
        cb = max(cin // len(bins), 1)
        # no BatchNorm on pooled maps: a 1x1 map cannot be batch-normalized at batch size 1
        self.branches = nn.ModuleList(nn.Sequential(nn.Conv2d(cin, cb, 1), nn.ReLU(inplace=True)) for _ in bins)
        self.out_channels = cin + cb * len(bins)

    def forward(self, x):
        outs = [x]
        for b, branch in zip(self.bins, self.branches):
            outs.append(upsample_to(branch(F.adaptive_avg_pool2d(x, b)), x))
        return torch.cat(outs, 1)


class PSPNet(SegNet):
    """Pyramid pooling on the stride-8 features, bilinear upsampling to input size."""

    def build_decoder(self, ch):
        self.level = min(3, self.depth)
        self.ppm = PyramidPooling(ch[self.level])
        self.fuse = conv_bn_relu(self.ppm.out_channels, 2 * self.width)
        self.head = nn.Conv2d(2 * self.width, 1, 1)

    def decode(self, feats, size):
        return upsample_to(self.head(self.fuse(self.ppm(feats[self.level]))), size)


class FeaturePyramidAttention(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.mid = conv_bn_relu(cin, cout, k=1)
        self.glob = nn.Sequential(nn.Conv2d(cin, cout, 1), nn.ReLU(inplace=True))
        self.down1 = conv_bn_relu(cin, 1, k=5)
        self.down2 = conv_bn_relu(1, 1, k=3)
        self.refine1 = conv_bn_relu(1, 1, k=5)
        self.refine2 = conv_bn_relu(1, 1, k=3)

    def forward(self, x):
        d1 = self.down1(F.max_pool2d(x, 2, ceil_mode=True))
        d2 = self.down2(F.max_pool2d(d1, 2, ceil_mode=True))
        a = self.refine1(d1) + upsample_to(self.refine2(d2), d1)
        attn = upsample_to(a, x)
        g = upsample_to(self.glob(F.adaptive_avg_pool2d(x, 1)), x)
        return self.mid(x) * attn + g


class GlobalAttentionUpsample(nn.Module):
    def __init__(self, c_low: int, c: int):
        super().__init__()
        self.low = conv_bn_relu(c_low, c)
        self.gate = nn.Sequential(nn.Conv2d(c, c, 1), nn.Sigmoid())

    def forward(self, high, low):
        gate = self.gate(F.adaptive_avg_pool2d(high, 1))
        return upsample_to(high, low) + self.low(low) * gate


class PAN(SegNet):
    """Pyramid attention on the deepest features plus global-attention upsampling."""

    def build_decoder(self, ch):
        pc = 2 * self.width
        self.fpa = FeaturePyramidAttention(ch[-1], pc)
        self.gau = nn.ModuleList(GlobalAttentionUpsample(ch[i], pc) for i in range(1, self.depth))
        self.head = nn.Conv2d(pc, 1, 1)

    def decode(self, feats, size):
        x = self.fpa(feats[-1])
        for i in reversed(range(1, self.depth)):
            x = self.gau[i - 1](x, feats[i])
        return upsample_to(self.head(x), size)


class ASPP(nn.Module):
    def __init__(self, cin: int, cout: int, rates=(2, 4, 6)):
        super().__init__()
        self.branches = nn.ModuleList([conv_bn_relu(cin, cout, k=1)] + [conv_bn_relu(cin, cout, dilation=r) for r in rates])
        self.pool = nn.Sequential(nn.Conv2d(cin, cout, 1), nn.ReLU(inplace=True))
        self.project = conv_bn_relu(cout * (len(rates) + 2), cout, k=1)

    def forward(self, x):
        outs = [b(x) for b in self.branches]
        outs.append(upsample_to(self.pool(F.adaptive_avg_pool2d(x, 1)), x))
        return self.project(torch.cat(outs, 1))


class DeepLabV3(SegNet):
    """Dilated encoder (output stride 8) with an ASPP head."""

    output_stride = 8

    def build_decoder(self, ch):
        c = 2 * self.width
        self.aspp = ASPP(ch[-1], c)
        self.conv = conv_bn_relu(c, c)
        self.head = nn.Conv2d(c, 1, 1)

    def decode(self, feats, size):
        return upsample_to(self.head(self.conv(self.aspp(feats[-1]))), size)


class DeepLabV3Plus(SegNet):
    """ASPP plus a light decoder fusing stride-4 encoder features."""

    output_stride = 8

    def build_decoder(self, ch):
        c = 2 * self.width
        self.low_level = min(2, self.depth)
        self.aspp = ASPP(ch[-1], c)
        self.low = conv_bn_relu(ch[self.low_level], self.width, k=1)
        self.decoder = double_conv(c + self.width, c)
        self.head = nn.Conv2d(c, 1, 1)

    def decode(self, feats, size):
        low = feats[self.low_level]
        x = upsample_to(self.aspp(feats[-1]), low)
        x = self.decoder(torch.cat([x, self.low(low)], 1))
        return upsample_to(self.head(x), size)


ARCHITECTURES: dict[str, type[SegNet]] = {
    "Unet": Unet,
    "UnetPP": UnetPP,
    "MANet": MANet,
    "Linknet": Linknet,
    "FPN": FPN,
    "PSPNet": PSPNet,
    "PAN": PAN,
    "DeepLabV3": DeepLabV3,
    "DeepLabV3Plus": DeepLabV3Plus,
}
