from ._specs import same_padding


def _kernel_stride(layer):
    if hasattr(layer, 'kernel'):
        return layer.kernel, layer.stride
    kernel, stride = layer
    return kernel, stride


def receptive_field(layers):
    """Receptive field, in input pixels, of one output unit of a convolution stack.

    Parameters
    ----------
    layers : list of (kernel, stride) or of LayerSpec
        in forward order

    Returns
    -------
    int

    Notes
    -----
    Uses the recurrence ``rf <- rf + (k - 1) * jump``, ``jump <- jump * s``
    starting from ``rf = jump = 1``.
    """
    if not layers:
        raise ValueError('receptive_field needs at least one layer')
    rf, jump = 1, 1
    for layer in layers:
        kernel, stride = _kernel_stride(layer)
        rf += (kernel - 1) * jump
        jump *= stride
    return rf


def receptive_field_span(layers, index):
    """Input interval ``(first, last)`` read by output unit ``index`` along one axis.

    Padding is the same padding used to build the networks, so the bounds
    may fall outside the image; inside the image they are exact.
    """
    if not layers:
        raise ValueError('receptive_field_span needs at least one layer')
    first, last = index, index
    for layer in reversed(layers):
        kernel, stride = _kernel_stride(layer)
        before, _ = same_padding(kernel, stride)
        first = first * stride - before
        last = last * stride - before + kernel - 1
    return first, last
