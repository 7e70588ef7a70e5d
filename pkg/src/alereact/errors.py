"""Exception hierarchy. Every error carries a short machine-readable code used by the CLI."""


class AleReactError(Exception):
    code = "error"


class ConfigError(AleReactError):
    code = "config"


class NetworkError(ConfigError):
    code = "network"


class MeshError(AleReactError):
    code = "mesh"


class MeshGenerationError(MeshError):
    code = "mesh-generation"


class InvertedElementError(MeshError):
    code = "element-inversion"


class PointLocationError(MeshError):
    code = "point-location"


class GeometryError(AleReactError):
    code = "geometry"


class SolverError(AleReactError):
    code = "solver"


class SingularSystemError(SolverError):
    code = "singular"


class ConvergenceError(SolverError):
    code = "no-convergence"


class PicardError(SolverError):
    code = "picard"


class SurfaceTensionError(AleReactError):
    code = "surface-tension"


class SourceTermError(AleReactError):
    code = "source-term"


class InvariantError(AleReactError):
    code = "invariant"


# process exit status per error code (0 is success, 1 an unexpected failure)
EXIT_STATUS = {
    "config": 2, "network": 3, "mesh": 4, "mesh-generation": 4, "element-inversion": 5,
    "point-location": 4, "geometry": 6, "solver": 7, "singular": 7, "no-convergence": 7,
    "picard": 8, "surface-tension": 9, "source-term": 10, "invariant": 11, "error": 1,
}


def exit_status(exc: BaseException) -> int:
    return EXIT_STATUS.get(getattr(exc, "code", "error"), 1)
