"""Independent analytic oracles used by the tests.

The parameter counters mirror the architecture definitions with plain
arithmetic (conv = in*out*kh*kw, batchnorm = 2*channels, linear =
in*out + out) and never touch the built modules, so they can catch
builder mistakes.
"""

RESNET_DEFAULT_WIDTHS = (64, 128, 256, 512)
INCEPTION_DEFAULT_WIDTHS = (512, 768, 1152)
INCEPTION_EXPANSION = 4608


def conv_params(in_c, out_c, k, bias=False):
    return in_c * out_c * k * k + (out_c if bias else 0)


def bn_params(channels):
    return 2 * channels


def basic_block_params(in_c, out_c, stride):
    total = conv_params(in_c, out_c, 3) + bn_params(out_c)
    total += conv_params(out_c, out_c, 3) + bn_params(out_c)
    if stride != 1 or in_c != out_c:
        total += conv_params(in_c, out_c, 1) + bn_params(out_c)
    return total


def resnet_param_count(block_layers, widths=RESNET_DEFAULT_WIDTHS, head_out=1):
    total = conv_params(3, widths[0], 7) + bn_params(widths[0])  # stem
    in_c = widths[0]
    for stage, (w, n) in enumerate(zip(widths, block_layers), start=1):
        for b in range(n):
            stride = 2 if (stage > 1 and b == 0) else 1
            total += basic_block_params(in_c, w, stride)
            in_c = w
    total += widths[-1] * head_out + head_out  # linear head
    return total


def inception_block_params(in_c, width):
    b1, b3r, b3, b5r, b5, pp = (
        width // 4, width // 8, width // 2, width // 16, width // 8, width // 8,
    )
    total = conv_params(in_c, b1, 1) + bn_params(b1)
    total += conv_params(in_c, b3r, 1) + bn_params(b3r)
    total += conv_params(b3r, b3, 3) + bn_params(b3)
    total += conv_params(in_c, b5r, 1) + bn_params(b5r)
    total += conv_params(b5r, b5, 5) + bn_params(b5)
    total += conv_params(in_c, pp, 1) + bn_params(pp)
    return total


def inception_param_count(block_layers, widths=INCEPTION_DEFAULT_WIDTHS,
                          expansion=INCEPTION_EXPANSION, head_out=1):
    total = conv_params(3, 64, 7) + bn_params(64)  # stem
    total += conv_params(64, 64, 1) + bn_params(64)
    total += conv_params(64, 192, 3) + bn_params(192)
    in_c = 192
    for w, n in zip(widths, block_layers):
        for _ in range(n):
            total += inception_block_params(in_c, w)
            in_c = w
    total += conv_params(in_c, expansion, 1) + bn_params(expansion)
    total += expansion * head_out + head_out
    return total
