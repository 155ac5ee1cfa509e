# Copyright (c) Ely Deckers.
#
# This source code is licensed under the MPL-2.0 license found in the
# LICENSE file in the root directory of this source tree.

"""
This library disentangles spoof traces from face images, moves them onto live
faces to synthesize new spoofs and scores presentation attacks, on a small
NumPy autodiff engine.

For more information: https://github.com/edeckers/spooftrace
"""
