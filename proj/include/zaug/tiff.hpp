#ifndef ZAUG_TIFF_HPP
#define ZAUG_TIFF_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "zaug/common.hpp"

// Minimal baseline-TIFF codec: multi-page, grayscale, 8/16-bit, uncompressed
// strips. This is the only stack format the toolkit reads and writes; files
// produced here round-trip bit-exactly.

namespace zaug::tiff {

struct Page {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint16_t bits = 8;            // 8 or 16
    std::vector<std::uint8_t> pixels;  // row-major, native-endian 16-bit
    std::string description;           // ImageDescription, first page carries metadata
};

namespace detail {

struct Reader {
    const std::vector<std::uint8_t>& buf;
    bool big_endian = false;

    std::uint16_t u16(std::size_t off) const {
        ZAUG_CHECK(off + 2 <= buf.size(), "tiff: truncated file");
        return big_endian ? static_cast<std::uint16_t>((buf[off] << 8) | buf[off + 1])
                          : static_cast<std::uint16_t>(buf[off] | (buf[off + 1] << 8));
    }
    std::uint32_t u32(std::size_t off) const {
        ZAUG_CHECK(off + 4 <= buf.size(), "tiff: truncated file");
        return big_endian
                   ? (static_cast<std::uint32_t>(buf[off]) << 24) | (static_cast<std::uint32_t>(buf[off + 1]) << 16) |
                         (static_cast<std::uint32_t>(buf[off + 2]) << 8) | buf[off + 3]
                   : static_cast<std::uint32_t>(buf[off]) | (static_cast<std::uint32_t>(buf[off + 1]) << 8) |
                         (static_cast<std::uint32_t>(buf[off + 2]) << 16) | (static_cast<std::uint32_t>(buf[off + 3]) << 24);
    }
};

struct Entry {
    std::uint16_t tag = 0;
    std::uint16_t type = 0;
    std::uint32_t count = 0;
    std::size_t value_off = 0;  // position of the 4-byte value field
};

inline std::size_t type_size(std::uint16_t type) {
    switch (type) {
        case 1: case 2: case 6: case 7: return 1;  // BYTE/ASCII/SBYTE/UNDEFINED
        case 3: case 8: return 2;                  // SHORT/SSHORT
        case 4: case 9: case 11: return 4;         // LONG/SLONG/FLOAT
        case 5: case 10: case 12: return 8;        // RATIONAL/SRATIONAL/DOUBLE
        default: return 0;
    }
}

inline std::vector<std::uint32_t> read_values(const Reader& r, const Entry& e) {
    const std::size_t sz = type_size(e.type);
    ZAUG_CHECK(sz == 1 || sz == 2 || sz == 4, "tiff: unsupported value type ", e.type, " for tag ", e.tag);
    const std::size_t total = sz * e.count;
    std::size_t base = total <= 4 ? e.value_off : r.u32(e.value_off);
    std::vector<std::uint32_t> out;
    out.reserve(e.count);
    for (std::uint32_t i = 0; i < e.count; ++i) {
        if (sz == 1) {
            ZAUG_CHECK(base + i < r.buf.size(), "tiff: truncated value");
            out.push_back(r.buf[base + i]);
        } else if (sz == 2) {
            out.push_back(r.u16(base + 2 * i));
        } else {
            out.push_back(r.u32(base + 4 * i));
        }
    }
    return out;
}

}  // namespace detail

inline std::vector<Page> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    ZAUG_CHECK(in.good(), "cannot open file: ", path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ZAUG_CHECK(buf.size() >= 8, "tiff: file too small: ", path);

    detail::Reader r{buf};
    if (buf[0] == 'M' && buf[1] == 'M')
        r.big_endian = true;
    else
        ZAUG_CHECK(buf[0] == 'I' && buf[1] == 'I', "not a TIFF file: ", path);
    ZAUG_CHECK(r.u16(2) == 42, "not a TIFF file (bad magic): ", path);

    std::vector<Page> pages;
    std::size_t ifd_off = r.u32(4);
    int page_index = 0;
    while (ifd_off != 0) {
        ++page_index;
        const std::uint16_t n_entries = r.u16(ifd_off);
        Page pg;
        std::uint32_t compression = 1, photometric = 1, samples = 1, sample_format = 1;
        std::uint32_t rows_per_strip = 0xffffffffu;
        std::vector<std::uint32_t> strip_offsets, strip_counts;
        for (std::uint16_t i = 0; i < n_entries; ++i) {
            const std::size_t e_off = ifd_off + 2 + static_cast<std::size_t>(i) * 12;
            detail::Entry e{r.u16(e_off), r.u16(e_off + 2), r.u32(e_off + 4), e_off + 8};
            switch (e.tag) {
                case 256: pg.width = detail::read_values(r, e)[0]; break;
                case 257: pg.height = detail::read_values(r, e)[0]; break;
                case 258: {
                    auto v = detail::read_values(r, e);
                    ZAUG_CHECK(v.size() == 1, "page ", page_index, ": not grayscale (", v.size(), " samples per pixel)");
                    pg.bits = static_cast<std::uint16_t>(v[0]);
                    break;
                }
                case 259: compression = detail::read_values(r, e)[0]; break;
                case 262: photometric = detail::read_values(r, e)[0]; break;
                case 270: {
                    detail::Entry se = e;
                    const std::size_t base = se.count <= 4 ? se.value_off : r.u32(se.value_off);
                    ZAUG_CHECK(base + se.count <= buf.size(), "tiff: truncated description");
                    pg.description.assign(reinterpret_cast<const char*>(buf.data() + base),
                                          se.count > 0 ? se.count - 1 : 0);  // strip trailing NUL
                    break;
                }
                case 273: strip_offsets = detail::read_values(r, e); break;
                case 277: samples = detail::read_values(r, e)[0]; break;
                case 278: rows_per_strip = detail::read_values(r, e)[0]; break;
                case 279: strip_counts = detail::read_values(r, e); break;
                case 339: sample_format = detail::read_values(r, e)[0]; break;
                default: break;  // ignore resolution, software, etc.
            }
        }
        ZAUG_CHECK(pg.width > 0 && pg.height > 0, "page ", page_index, ": missing dimensions");
        ZAUG_CHECK(compression == 1, "page ", page_index, ": unsupported compression ", compression);
        ZAUG_CHECK(samples == 1, "page ", page_index, ": not grayscale (", samples, " samples per pixel)");
        ZAUG_CHECK(photometric <= 1, "page ", page_index, ": not grayscale (photometric ", photometric, ")");
        ZAUG_CHECK(sample_format == 1, "page ", page_index, ": unsupported sample format ", sample_format);
        ZAUG_CHECK(pg.bits == 8 || pg.bits == 16, "page ", page_index, ": unsupported bit depth ", pg.bits);
        ZAUG_CHECK(!strip_offsets.empty() && strip_counts.size() == strip_offsets.size(),
                   "page ", page_index, ": malformed strip tables");

        const std::size_t bytes_per_px = pg.bits / 8;
        const std::size_t row_bytes = static_cast<std::size_t>(pg.width) * bytes_per_px;
        pg.pixels.resize(row_bytes * pg.height);
        std::size_t row = 0;
        for (std::size_t s = 0; s < strip_offsets.size(); ++s) {
            const std::size_t nrows = std::min<std::size_t>(rows_per_strip, pg.height - row);
            ZAUG_CHECK(strip_counts[s] == nrows * row_bytes, "page ", page_index, ": strip ", s + 1, " size mismatch");
            ZAUG_CHECK(strip_offsets[s] + strip_counts[s] <= buf.size(), "page ", page_index, ": strip out of bounds");
            std::memcpy(pg.pixels.data() + row * row_bytes, buf.data() + strip_offsets[s], strip_counts[s]);
            row += nrows;
        }
        ZAUG_CHECK(row == pg.height, "page ", page_index, ": incomplete pixel data");

        if (pg.bits == 16 && r.big_endian) {
            for (std::size_t i = 0; i + 1 < pg.pixels.size(); i += 2) std::swap(pg.pixels[i], pg.pixels[i + 1]);
        }
        pages.push_back(std::move(pg));
        ifd_off = r.u32(ifd_off + 2 + static_cast<std::size_t>(n_entries) * 12);
    }
    ZAUG_CHECK(!pages.empty(), "tiff: no pages in ", path);
    return pages;
}

namespace detail {

struct Writer {
    std::vector<std::uint8_t> buf;

    void u16(std::uint16_t v) {
        buf.push_back(static_cast<std::uint8_t>(v & 0xff));
        buf.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
    void patch_u32(std::size_t off, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf[off + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
    }
    void entry(std::uint16_t tag, std::uint16_t type, std::uint32_t count, std::uint32_t value) {
        u16(tag);
        u16(type);
        u32(count);
        u32(value);
    }
};

}  // namespace detail

inline void write_file(const std::string& path, const std::vector<Page>& pages) {
    ZAUG_CHECK(!pages.empty(), "tiff write: no pages");
    detail::Writer w;
    w.buf.reserve(1024);
    w.u16(0x4949);  // "II"
    w.u16(42);
    const std::size_t first_ifd_patch = w.buf.size();
    w.u32(0);  // patched to the first IFD offset

    std::size_t prev_next_patch = first_ifd_patch;
    for (const auto& pg : pages) {
        ZAUG_CHECK(pg.bits == 8 || pg.bits == 16, "tiff write: bad bit depth ", pg.bits);
        const std::size_t expect = static_cast<std::size_t>(pg.width) * pg.height * (pg.bits / 8);
        ZAUG_CHECK(pg.pixels.size() == expect, "tiff write: pixel buffer size mismatch");

        const std::size_t data_off = w.buf.size();
        w.buf.insert(w.buf.end(), pg.pixels.begin(), pg.pixels.end());
        if (w.buf.size() % 2) w.buf.push_back(0);  // word-align

        std::size_t desc_off = 0;
        std::size_t desc_len = 0;
        if (!pg.description.empty()) {
            desc_len = pg.description.size() + 1;
            desc_off = w.buf.size();
            w.buf.insert(w.buf.end(), pg.description.begin(), pg.description.end());
            w.buf.push_back(0);
            if (w.buf.size() % 2) w.buf.push_back(0);
        }

        const std::size_t ifd_off = w.buf.size();
        w.patch_u32(prev_next_patch, static_cast<std::uint32_t>(ifd_off));
        const std::uint16_t n_entries = pg.description.empty() ? 10 : 11;
        w.u16(n_entries);
        w.entry(256, 4, 1, pg.width);
        w.entry(257, 4, 1, pg.height);
        w.entry(258, 3, 1, pg.bits);
        w.entry(259, 3, 1, 1);  // uncompressed
        w.entry(262, 3, 1, 1);  // BlackIsZero
        if (!pg.description.empty()) {
            if (desc_len <= 4) {
                std::uint32_t inl = 0;
                for (std::size_t i = 0; i < desc_len && i < pg.description.size(); ++i)
                    inl |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(pg.description[i])) << (8 * i);
                w.entry(270, 2, static_cast<std::uint32_t>(desc_len), inl);
            } else {
                w.entry(270, 2, static_cast<std::uint32_t>(desc_len), static_cast<std::uint32_t>(desc_off));
            }
        }
        w.entry(273, 4, 1, static_cast<std::uint32_t>(data_off));  // single strip
        w.entry(277, 3, 1, 1);
        w.entry(278, 4, 1, pg.height);
        w.entry(279, 4, 1, static_cast<std::uint32_t>(pg.pixels.size()));
        w.entry(339, 3, 1, 1);  // unsigned
        prev_next_patch = w.buf.size();
        w.u32(0);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    ZAUG_CHECK(out.good(), "cannot write file: ", path);
    out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    ZAUG_CHECK(out.good(), "write failed: ", path);
}

}  // namespace zaug::tiff

#endif
