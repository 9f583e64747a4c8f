from distillkit.numerics import ops
from distillkit.numerics.gradcheck import GradReport, fd_check
from distillkit.numerics.kernels import BACKEND
from distillkit.numerics.tensor import ComputeGraph, Tensor, as_tensor, backward

__all__ = ["BACKEND", "ComputeGraph", "GradReport", "Tensor", "as_tensor", "backward", "fd_check", "ops"]
