"""Пакет с реализациями хранилищ (файловое и in-memory) и артефактов стадий."""
