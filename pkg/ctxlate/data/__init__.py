from .phantom import (Ellipse, PhantomSpec, DegradationSpec, generate_labels, generate_truth, degrade_to_cbct,
                      artifact_field, place_rois, emit_dataset, TISSUES, LABELS, SOFT_TISSUES, AIR_BOUNDARY_HU)
from .slice_dataset import (PatientRecord, Manifest, SliceSet, load_manifest, split_patients,
                            load_scaled_slices)
