"""Редактирование признаков pool5 по дисперсиям эксцесса каналов."""

__version__ = "0.1.0"
