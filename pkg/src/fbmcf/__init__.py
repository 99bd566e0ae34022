"""Free-boundary mean curvature flow of convex caps against analytic barriers."""

__version__ = "0.1.0"
