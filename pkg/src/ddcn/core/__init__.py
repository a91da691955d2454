from ddcn.core.gradcheck import GradCheckReport, grad_check, relative_error
from ddcn.core.ops import (
    BatchNormState,
    ConvSpec,
    batchnorm,
    conv2d,
    conv3d,
    mean_abs_error,
    pixel_shuffle,
    pixel_unshuffle,
    relu,
    softmax_axis,
)
from ddcn.core.resample import bicubic_resize, gaussian_blur, gaussian_taps, keys_kernel
from ddcn.core.tensor import (
    Tensor,
    astensor,
    clear_backward_faults,
    concat,
    no_grad,
    set_backward_fault,
    stack,
)
