"""OCTA lesion segmentation, biomarkers, voxel volumetry and white-box rules."""

from .biomarkers import BiomarkerRecord, extract_record, mcnv_area, total_area, vessel_density
from .imgcore import BinaryMask, CropRect, GrayImage, PixelGeometry, crop, gaussian_blur, load_gray, pixel_geometry, save_gray
from .metrics import OverlapReport, overlap
from .segmentation import PipelineConfig, run_pipeline
from .volume3d import SectionStack, TriangleMesh, export_stl, mesh_volume, stack_volume, voxel_surface
from .whitebox import Label, ensemble_classify

__version__ = "0.1.0"
