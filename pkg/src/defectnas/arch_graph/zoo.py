"""Predefined architectures: the three best MetaQNN networks and the literature baselines.

Baselines follow their original definitions with the ImageNet head replaced by
a 6-way sigmoid classifier:

* ``alexnet``: single-tower AlexNet (64-192-384-256-256 filters), 3x3/2 max
  pools, two 4096-unit hidden layers.
* ``tcnn``: the AlexNet body whose first hidden layer additionally receives the
  global-average "energy" of conv3 (384 values) concatenated to the flattened
  conv5 map.  The flattened part scales with the patch size, which is what the
  patch-size sweep modifies.
* ``vgg-a`` / ``vgg-d``: configurations A (11 layers) and D (16 layers), no
  batchnorm.
* ``wrn-28-4``: pre-activation wide ResNet, 4 blocks per group, widths
  64/128/256, 1x1 projection shortcuts where the width changes, no conv
  biases.
* ``densenet-121``: growth rate 32, bottleneck width 4k, compression 0.5,
  blocks of 6/12/24/16 layers, no conv biases.
"""
from __future__ import annotations

from .graph import ArchGraph, LayerSpec, SkipEdge

NUM_CLASSES = 6

ARCHITECTURES = (
    "metaqnn-1", "metaqnn-2", "metaqnn-3",
    "alexnet", "tcnn", "vgg-a", "vgg-d", "wrn-28-4", "densenet-121",
)

# Published figures: (params in millions, trainable layers).
PUBLISHED = {
    "alexnet": (57.02, 8),
    "tcnn": (58.60, 8),
    "vgg-a": (128.79, 11),
    "vgg-d": (134.28, 16),
    "wrn-28-4": (5.84, 28),
    "densenet-121": (11.50, 121),
    "metaqnn-1": (4.53, 6),
    "metaqnn-2": (1.22, 8),
    "metaqnn-3": (2.88, 7),
}


def _conv(k, f, s=1, p=0, **kw):
    kw.setdefault("bn", True)
    kw.setdefault("relu", True)
    return LayerSpec("conv", kernel=k, features=f, stride=s, padding=p, **kw)


def _fc(f, **kw):
    kw.setdefault("bn", True)
    kw.setdefault("relu", True)
    return LayerSpec("dense", features=f, **kw)


def _classifier():
    return LayerSpec("classifier", features=NUM_CLASSES)


def _spp(scales):
    return LayerSpec("spp", spp_scales=scales, bias=False)


def _metaqnn(name, layers, skips, patch):
    return ArchGraph(tuple(layers), tuple(skips), 3, patch, NUM_CLASSES, "metaqnn", name)


def metaqnn_1(patch=224):
    layers = [
        _conv(9, 256, s=2), _conv(3, 32, p=1), _conv(5, 256), _conv(7, 256, s=2),
        _spp(4), _fc(128), _classifier(),
    ]
    return _metaqnn("metaqnn-1", layers, [], patch)


def metaqnn_2(patch=224):
    layers = [
        _conv(5, 128), _conv(7, 32, s=2), _conv(3, 256, p=1), _conv(3, 256, p=1),
        _conv(3, 32), _conv(9, 128, s=2), _spp(3), _fc(128), _classifier(),
    ]
    # 1x1-256 parallel conv on conv3, attached to conv5
    skips = [SkipEdge(2, 5, "add", projection=True)]
    return _metaqnn("metaqnn-2", layers, skips, patch)


def metaqnn_3(patch=224):
    layers = [
        _conv(3, 128, p=1), _conv(3, 128, p=1), _conv(9, 128, s=2), _conv(3, 256, p=1),
        _conv(3, 256, p=1), _spp(4), _fc(64), _classifier(),
    ]
    skips = [SkipEdge(0, 3, "add", projection=True), SkipEdge(3, 6, "add", projection=True)]
    return _metaqnn("metaqnn-3", layers, skips, patch)


def _plain(k, f, s=1, p=0):
    return LayerSpec("conv", kernel=k, features=f, stride=s, padding=p, relu=True)


def _maxpool(k=3, s=2, p=0):
    return LayerSpec("maxpool", kernel=k, stride=s, padding=p, bias=False)


def _alexnet_body():
    return [
        _plain(11, 64, s=4, p=2), _maxpool(),
        _plain(5, 192, p=2), _maxpool(),
        _plain(3, 384, p=1), _plain(3, 256, p=1), _plain(3, 256, p=1), _maxpool(),
    ]


def _plain_head():
    return [
        LayerSpec("flatten", bias=False),
        LayerSpec("dense", features=4096, relu=True),
        LayerSpec("dense", features=4096, relu=True),
        _classifier(),
    ]


def alexnet(patch=224):
    return ArchGraph(tuple(_alexnet_body() + _plain_head()), (), 3, patch, NUM_CLASSES, None, "alexnet")


def tcnn(patch=224):
    layers = _alexnet_body() + _plain_head()
    # node 5 = conv3 output, node 10 = first hidden layer
    skips = [SkipEdge(5, 10, "concat", pool=True)]
    return ArchGraph(tuple(layers), tuple(skips), 3, patch, NUM_CLASSES, None, "tcnn")


_VGG_CFG = {
    "vgg-a": [64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"],
    "vgg-d": [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"],
}


def vgg(name, patch=224):
    layers = []
    for item in _VGG_CFG[name]:
        layers.append(_maxpool(2, 2) if item == "M" else _plain(3, item, p=1))
    return ArchGraph(tuple(layers + _plain_head()), (), 3, patch, NUM_CLASSES, None, name)


def wrn(depth=28, width=4, patch=224):
    n = (depth - 4) // 6
    layers = [LayerSpec("conv", kernel=3, features=16, padding=1, bias=False)]
    skips = []
    in_ch = 16
    for group, base in enumerate((16, 32, 64)):
        f = base * width
        for b in range(n):
            stride = 2 if group > 0 and b == 0 else 1
            src = len(layers)  # node feeding this block
            layers.append(LayerSpec("conv", kernel=3, features=f, stride=stride, padding=1,
                                    bias=False, preact=True))
            layers.append(LayerSpec("conv", kernel=3, features=f, padding=1, bias=False, preact=True))
            # residual lands on whatever consumes the block output
            skips.append(SkipEdge(src, len(layers) + 1, "add", projection=in_ch != f, proj_bias=False))
            in_ch = f
    layers.append(LayerSpec("gap", bias=False, preact=True))
    layers.append(_classifier())
    return ArchGraph(tuple(layers), tuple(skips), 3, patch, NUM_CLASSES, None, f"wrn-{depth}-{width}")


def densenet121(patch=224, growth=32, blocks=(6, 12, 24, 16), bn_size=4):
    layers = [
        LayerSpec("conv", kernel=7, features=2 * growth, stride=2, padding=3, bias=False, bn=True, relu=True),
        LayerSpec("maxpool", kernel=3, stride=2, padding=1, bias=False),
    ]
    skips = []
    channels = 2 * growth
    for bi, count in enumerate(blocks):
        feeder = None  # node whose forwarded value fed the previous dense layer
        for _ in range(count):
            node_1x1 = len(layers) + 1
            if feeder is not None:
                skips.append(SkipEdge(feeder, node_1x1, "concat"))
            feeder = node_1x1 - 1
            layers.append(LayerSpec("conv", kernel=1, features=bn_size * growth, bias=False, preact=True))
            layers.append(LayerSpec("conv", kernel=3, features=growth, padding=1, bias=False, preact=True))
            channels += growth
        skips.append(SkipEdge(feeder, len(layers) + 1, "concat"))
        if bi < len(blocks) - 1:
            channels //= 2
            layers.append(LayerSpec("conv", kernel=1, features=channels, bias=False, preact=True))
            layers.append(LayerSpec("avgpool", kernel=2, stride=2, bias=False))
    layers.append(LayerSpec("gap", bias=False, preact=True))
    layers.append(_classifier())
    return ArchGraph(tuple(layers), tuple(skips), 3, patch, NUM_CLASSES, None, "densenet-121")


class UnknownArchitecture(KeyError):
    pass


def predefined_architecture(name: str, patch_size: int = 224) -> ArchGraph:
    key = name.lower()
    builders = {
        "metaqnn-1": metaqnn_1,
        "metaqnn-2": metaqnn_2,
        "metaqnn-3": metaqnn_3,
        "alexnet": alexnet,
        "tcnn": tcnn,
        "t-cnn": tcnn,
        "vgg-a": lambda p: vgg("vgg-a", p),
        "vgg-d": lambda p: vgg("vgg-d", p),
        "wrn-28-4": lambda p: wrn(28, 4, p),
        "densenet-121": densenet121,
    }
    if key not in builders:
        raise UnknownArchitecture(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}")
    return builders[key](patch_size)
