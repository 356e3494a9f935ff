from .container import load_dataset, read_sequences, write_container
from .raw import ingest, parse_ntu_skeleton
from .skeleton import (NUM_FRAMES, BoneTable, center_sequence, DatasetSplit, ModalityStream, SkeletonSequence, bone_table_for,
                       chain_bones, derive_array, derive_stream, downsample_frames, frame_indices, ntu25_bones,
                       stack_batch)
from .splits import holdout_split, make_split, semi_subset
from .synth import shuffle_pairs, synth_generate, synth_sequences, template_means
