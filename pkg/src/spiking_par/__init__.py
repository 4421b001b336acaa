"""Spiking-transformer pedestrian attribute recognition with distillation."""
