from ._preprocess import (BodyMask, CropSpec, otsu_threshold, body_mask, apply_body_mask,
                          clip_and_scale, unscale, center_crop, crop_window, pad_to_multiple,
                          unpad, identity_alignment, preprocess_volume, prepare_slice, mask_volume,
                          AIR_HU, CLIP_MIN, CLIP_MAX)
