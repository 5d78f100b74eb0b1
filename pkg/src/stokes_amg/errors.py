"""Exception types raised across the package."""


class DimensionMismatch(ValueError):
    pass


class SingularMatrix(ArithmeticError):
    pass


class ZeroDiagonal(ValueError):
    pass


class MeshFormatError(ValueError):
    pass


class UntaggedBoundary(MeshFormatError):
    pass


class NonManifoldEdge(MeshFormatError):
    pass


class StabilityError(ValueError):
    """Scott-Vogelius assembly requested on a mesh that is not barycentric."""


class CompatibilityError(ValueError):
    """Enclosed flow whose Dirichlet data has nonzero net flux."""


class ColocationError(ValueError):
    pass


class LineageError(ValueError):
    pass


class SingularPatch(ArithmeticError):
    def __init__(self, patch_id, msg="singular Vanka patch"):
        super().__init__(f"{msg} (patch {patch_id})")
        self.patch_id = patch_id


class UnsupportedDiscretization(ValueError):
    pass


class SolverStagnation(RuntimeError):
    pass


class ConfigError(ValueError):
    pass
