"""Prior knowledge distillation network for face super-resolution."""
