"""Writes the NIfTI-1 golden files used by test_io with nothing but the struct module.

Every file holds a 4x4x2 volume (W=4, H=4, D=2) whose scaled values are 0..31 in file order,
with voxel sizes 2 x 3 x 4 mm.
"""
import os
import struct

HERE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "nifti")


def header(endian, datatype, bitpix, slope, inter, dims=(3, 4, 4, 2, 1, 1, 1, 1), magic=b"n+1\0"):
    h = bytearray(348)
    struct.pack_into(endian + "i", h, 0, 348)
    struct.pack_into(endian + "8h", h, 40, *dims)
    struct.pack_into(endian + "h", h, 70, datatype)
    struct.pack_into(endian + "h", h, 72, bitpix)
    struct.pack_into(endian + "8f", h, 76, 1.0, 2.0, 3.0, 4.0, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into(endian + "f", h, 108, 352.0)
    struct.pack_into(endian + "f", h, 112, slope)
    struct.pack_into(endian + "f", h, 116, inter)
    h[344:348] = magic
    return bytes(h) + b"\0\0\0\0"


def write(name, endian, datatype, bitpix, fmt, raw, slope, inter, **kw):
    body = struct.pack(endian + str(len(raw)) + fmt, *raw)
    with open(os.path.join(HERE, name), "wb") as f:
        f.write(header(endian, datatype, bitpix, slope, inter, **kw) + body)


def main():
    os.makedirs(HERE, exist_ok=True)
    ramp = list(range(32))
    write("ramp_u8_le.nii", "<", 2, 8, "B", ramp, 1.0, 0.0)
    write("ramp_i16_be.nii", ">", 4, 16, "h", [2 * v - 10 for v in ramp], 0.5, 5.0)
    write("ramp_f32_le.nii", "<", 16, 32, "f", [float(v) for v in ramp], 0.0, 0.0)
    write("ramp_f32_be.nii", ">", 16, 32, "f", [float(v) for v in ramp], 0.0, 0.0)
    write("ramp_f32_dim5_unit.nii", "<", 16, 32, "f", [float(v) for v in ramp], 1.0, 0.0,
          dims=(5, 4, 4, 2, 1, 1, 1, 1))
    write("bad_datatype64.nii", "<", 64, 64, "d", [float(v) for v in ramp], 1.0, 0.0)
    write("bad_dim4.nii", "<", 16, 32, "f", [float(v) for v in ramp + ramp], 1.0, 0.0,
          dims=(4, 4, 4, 2, 2, 1, 1, 1))
    write("bad_magic.nii", "<", 16, 32, "f", [float(v) for v in ramp], 1.0, 0.0, magic=b"nX1\0")


if __name__ == "__main__":
    main()
