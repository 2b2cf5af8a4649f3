"""Super-resolution services: data, conditioning, backbone, training, sampling, distillation, evaluation."""
