"""Exception types shared across the package."""


class QualityError(RuntimeError):
    """A numerical-quality monitor tripped (stability, flatness, fit R^2...)."""


class UpstreamArtifactError(RuntimeError):
    """A pipeline stage is missing or inconsistent with its upstream artifacts."""
