"""Ecosystem glue for the gluse training kit.

Converts directory-per-class image datasets into the GLDS binary format and
exports per-sample teacher logits into GLTL, writing both formats from their
published byte layouts.  This package deliberately does not import the
training kit: the on-disk formats are the only integration surface.
"""

from .convert import ConversionManifest, convert_images
from .export import ZeroTeacher, export_teacher_logits, softmax
from .formats import write_glds, write_gltl

__all__ = [
    "ConversionManifest",
    "convert_images",
    "export_teacher_logits",
    "softmax",
    "write_glds",
    "write_gltl",
    "ZeroTeacher",
]
