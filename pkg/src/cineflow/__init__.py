"""cineflow: 4D myocardium surface reconstruction from sparse slice contours.

A phase-conditioned implicit deformation field maps points from any cardiac
phase into the end-diastolic frame, where a pre-trained implicit shape model
evaluates a signed distance. Composing the two yields a continuous 4D
surface representation that can be fit to sparse per-slice contour point
clouds by optimizing latent codes alone.
"""

__version__ = "0.1.0"
