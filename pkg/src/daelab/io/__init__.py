from .checkpoint import load_checkpoint, save_checkpoint
from .container import (ContainerError, read_archive, read_tensor, write_archive,
                        write_tensor)
from .datasets import (Dataset, DatasetError, load_cifar10, load_image_folder,
                       preprocess_celeba, read_ppm, resize_bilinear, write_cifar_records,
                       write_ppm)

__all__ = [
    "ContainerError", "Dataset", "DatasetError", "load_checkpoint", "load_cifar10",
    "load_image_folder", "preprocess_celeba", "read_archive", "read_ppm", "read_tensor",
    "resize_bilinear", "save_checkpoint", "write_archive", "write_cifar_records",
    "write_ppm", "write_tensor",
]
