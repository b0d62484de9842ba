"""Independent element counts written out layer by layer from textbook formulas.

Nothing here touches the library; spatial sizes are worked out by hand in
the comments so the library's shape inference is checked, not reused.
"""


def conv(cin, cout, k, bias=True, bn=False):
    return cout * cin * k * k + (cout if bias else 0) + (2 * cout if bn else 0)


def dense(fin, fout, bias=True, bn=False):
    return fin * fout + (fout if bias else 0) + (2 * fout if bn else 0)


def bn(c):
    return 2 * c


def metaqnn_1():
    # 224 -9/2-> 108 -3p1-> 108 -5-> 104 -7/2-> 49, spp 4 -> 256 * 30
    return (conv(3, 256, 9, bn=True) + conv(256, 32, 3, bn=True) + conv(32, 256, 5, bn=True)
            + conv(256, 256, 7, bn=True) + dense(256 * 30, 128, bn=True) + dense(128, 6))


def metaqnn_3():
    # two 1x1 projections with bias: input (3 ch) onto 128 ch, then 128 onto 256 ch
    return (conv(3, 128, 3, bn=True) + conv(128, 128, 3, bn=True) + conv(3, 128, 1)
            + conv(128, 128, 9, bn=True) + conv(128, 256, 3, bn=True) + conv(256, 256, 3, bn=True)
            + conv(128, 256, 1) + dense(256 * 30, 64, bn=True) + dense(64, 6))


def metaqnn_2():
    # 224 -5-> 220 -7/2-> 107 -3p1-> 107 -3p1-> 107 -3-> 105 -9/2-> 49, spp 3 -> 128 * 14
    # the skip adds the 32-ch map after conv 2 to the 256-ch input of conv 5 through a 1x1 projection
    return (conv(3, 128, 5, bn=True) + conv(128, 32, 7, bn=True) + conv(32, 256, 3, bn=True)
            + conv(256, 256, 3, bn=True) + conv(256, 32, 3, bn=True) + conv(32, 128, 9, bn=True)
            + conv(32, 256, 1) + dense(128 * 14, 128, bn=True) + dense(128, 6))


def densenet_121(k=32):
    # stem conv + bn, then blocks of (bn, 1x1 to 4k, bn, 3x3 to k), transitions halve channels
    total = conv(3, 64, 7, bias=False) + bn(64)
    c = 64
    for i, n in enumerate((6, 12, 24, 16)):
        for _ in range(n):
            total += bn(c) + conv(c, 4 * k, 1, bias=False) + bn(4 * k) + conv(4 * k, k, 3, bias=False)
            c += k
        if i < 3:
            total += bn(c) + conv(c, c // 2, 1, bias=False)
            c //= 2
    return total + bn(c) + dense(c, 6)


def alexnet():
    # 224 -11/4p2-> 55 -pool-> 27 -5p2-> 27 -pool-> 13 ... -pool-> 6; 256 * 6 * 6 = 9216
    return (conv(3, 64, 11) + conv(64, 192, 5) + conv(192, 384, 3) + conv(384, 256, 3) + conv(256, 256, 3)
            + dense(9216, 4096) + dense(4096, 4096) + dense(4096, 6))


def _vgg(cfg):
    total, cin = 0, 3
    for c in cfg:
        total += conv(cin, c, 3)
        cin = c
    # five 2x2 pools: 224 -> 7; 512 * 7 * 7 = 25088
    return total + dense(25088, 4096) + dense(4096, 4096) + dense(4096, 6)


def vgg_a():
    return _vgg([64, 128, 256, 256, 512, 512, 512, 512])


def vgg_d():
    return _vgg([64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512])


def wrn_28_4():
    total = conv(3, 16, 3, bias=False)
    cin = 16
    for base in (16, 32, 64):
        f = 4 * base
        for b in range(4):
            total += bn(cin) + conv(cin, f, 3, bias=False) + bn(f) + conv(f, f, 3, bias=False)
            if cin != f:
                total += conv(cin, f, 1, bias=False)
            cin = f
    return total + bn(cin) + dense(cin, 6)


ORACLES = {
    "metaqnn-1": metaqnn_1,
    "metaqnn-2": metaqnn_2,
    "metaqnn-3": metaqnn_3,
    "alexnet": alexnet,
    "vgg-a": vgg_a,
    "vgg-d": vgg_d,
    "wrn-28-4": wrn_28_4,
    "densenet-121": densenet_121,
}
