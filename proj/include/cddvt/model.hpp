#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "allocator.hpp"
#include "autoencoder.hpp"
#include "binary_io.hpp"
#include "codebook.hpp"
#include "optimizer.hpp"
#include "rng.hpp"

namespace cddvt {

struct ModelGeometry {
    std::size_t image_height = 32;
    std::size_t image_width = 32;
    std::size_t channels = 1;
    std::size_t patch = 4;
    std::size_t hidden_dim = 32;  // encoder/decoder hidden width
    std::size_t num_sub = 4;      // M
    std::size_t sub_size = 64;    // V'
    std::size_t prim_dim = 4;     // D'

    [[nodiscard]] std::size_t embed_dim() const noexcept { return num_sub * prim_dim; }
    [[nodiscard]] std::size_t patch_dim() const noexcept { return patch * patch * channels; }
    [[nodiscard]] std::size_t grid_h() const noexcept { return image_height / patch; }
    [[nodiscard]] std::size_t grid_w() const noexcept { return image_width / patch; }
    [[nodiscard]] std::size_t patches_per_image() const noexcept { return grid_h() * grid_w(); }
    [[nodiscard]] std::size_t allocator_hidden() const noexcept { return std::max<std::size_t>(1, embed_dim() / 2); }

    void validate() const {
        if (patch == 0 || image_height % patch || image_width % patch)
            throw ConfigError("image dimensions must be divisible by the patch size");
        if (num_sub == 0 || sub_size == 0 || prim_dim == 0 || hidden_dim == 0 || channels == 0)
            throw ConfigError("model dimensions must be >= 1");
    }

    bool operator==(const ModelGeometry&) const = default;
};

/// Encoder, allocator, codebook and decoder of one tokenizer.
struct Model {
    ModelGeometry geo;
    EncoderParams encoder;
    DecoderParams decoder;
    AllocatorParams allocator;
    Codebook codebook;

    /// Visits every trainable tensor in a fixed order.
    template <class F>
    void for_each_tensor(F&& f) {
        encoder.for_each_tensor(f);
        decoder.for_each_tensor(f);
        allocator.for_each_tensor(f);
        for (Matrix& e : codebook.entries) f(e);
    }
    template <class F>
    void for_each_tensor(F&& f) const {
        encoder.for_each_tensor(f);
        decoder.for_each_tensor(f);
        allocator.for_each_tensor(f);
        for (const Matrix& e : codebook.entries) f(e);
    }

    bool operator==(const Model&) const = default;
};

inline Model init_model(const ModelGeometry& geo, Rng& rng) {
    geo.validate();
    Model m;
    m.geo = geo;
    m.codebook = init_codebook(geo.num_sub, geo.sub_size, geo.prim_dim, rng.next_u64());
    m.encoder = init_mlp(geo.patch_dim(), geo.hidden_dim, geo.embed_dim(), rng);
    m.decoder = init_mlp(geo.embed_dim(), geo.hidden_dim, geo.patch_dim(), rng);
    m.allocator = init_allocator(geo.embed_dim(), geo.allocator_hidden(), rng);
    return m;
}

/// A model-shaped bundle of zero tensors, used to accumulate gradients.
inline Model zeros_like(const Model& m) {
    Model z = m;
    z.for_each_tensor([](Matrix& t) { t.fill(0.0); });
    z.codebook.reset_usage();
    return z;
}

// ---------------------------------------------------------------------------
// Checkpoint container: the codebook block ("CDDV" header, entries, usage
// counts) followed by tagged sections, each "TAG" (4 bytes) + u64 payload
// length + payload.
//   GEOM  u32 x 8 geometry fields
//   ENCD  4 matrices   DECD  4 matrices
//   ALOC  u32 in_channels, hidden, width1, width2 + 4 matrices
//   ADAM  u64 t, u32 n, n matrices m, n matrices v
//   STEP  u64 training step

struct Checkpoint {
    Model model;
    AdamState optimizer;
    std::uint64_t step = 0;
};

namespace detail {

inline void put_section(ByteWriter& w, const char* tag, const ByteWriter& payload) {
    w.tag(tag);
    w.u64(payload.buffer().size());
    w.bytes(payload.buffer());
}

inline void read_mlp(ByteReader& r, TwoLayerMlp& p) {
    p.for_each_tensor([&](Matrix& t) { t = r.matrix(); });
}

}  // namespace detail

inline Bytes serialize_checkpoint(const Checkpoint& ck) {
    ByteWriter w;
    write_codebook(w, ck.model.codebook);
    const ModelGeometry& g = ck.model.geo;
    {
        ByteWriter s;
        for (std::size_t v : {g.image_height, g.image_width, g.channels, g.patch, g.hidden_dim, g.num_sub, g.sub_size,
                              g.prim_dim})
            s.u32(static_cast<std::uint32_t>(v));
        detail::put_section(w, "GEOM", s);
    }
    {
        ByteWriter s;
        ck.model.encoder.for_each_tensor([&](const Matrix& t) { s.matrix(t); });
        detail::put_section(w, "ENCD", s);
    }
    {
        ByteWriter s;
        ck.model.decoder.for_each_tensor([&](const Matrix& t) { s.matrix(t); });
        detail::put_section(w, "DECD", s);
    }
    {
        ByteWriter s;
        const AllocatorParams& a = ck.model.allocator;
        for (std::size_t v : {a.in_channels, a.hidden, a.width1, a.width2}) s.u32(static_cast<std::uint32_t>(v));
        a.for_each_tensor([&](const Matrix& t) { s.matrix(t); });
        detail::put_section(w, "ALOC", s);
    }
    {
        ByteWriter s;
        s.u64(ck.optimizer.t);
        s.u32(static_cast<std::uint32_t>(ck.optimizer.m.size()));
        for (const Matrix& t : ck.optimizer.m) s.matrix(t);
        for (const Matrix& t : ck.optimizer.v) s.matrix(t);
        detail::put_section(w, "ADAM", s);
    }
    {
        ByteWriter s;
        s.u64(ck.step);
        detail::put_section(w, "STEP", s);
    }
    return w.take();
}

inline Checkpoint deserialize_checkpoint(const Bytes& bytes) {
    ByteReader r(bytes);
    Checkpoint ck;
    ck.model.codebook = read_codebook(r);
    bool have_geo = false, have_enc = false, have_dec = false, have_alloc = false;
    while (!r.done()) {
        const std::size_t at = r.offset();
        const std::string tag = r.tag();
        const std::uint64_t len = r.u64();
        if (len > r.remaining()) throw ParseError("section " + tag + " truncated", at);
        const std::size_t payload_at = r.offset();
        const Bytes payload = r.bytes(static_cast<std::size_t>(len));
        ByteReader s(payload, payload_at);
        if (tag == "GEOM") {
            ModelGeometry& g = ck.model.geo;
            for (std::size_t* f : {&g.image_height, &g.image_width, &g.channels, &g.patch, &g.hidden_dim, &g.num_sub,
                                   &g.sub_size, &g.prim_dim})
                *f = s.u32();
            have_geo = true;
        } else if (tag == "ENCD") {
            detail::read_mlp(s, ck.model.encoder);
            have_enc = true;
        } else if (tag == "DECD") {
            detail::read_mlp(s, ck.model.decoder);
            have_dec = true;
        } else if (tag == "ALOC") {
            AllocatorParams& a = ck.model.allocator;
            a.in_channels = s.u32();
            a.hidden = s.u32();
            a.width1 = s.u32();
            a.width2 = s.u32();
            a.for_each_tensor([&](Matrix& t) { t = s.matrix(); });
            try {
                a.validate();
            } catch (const Error& e) {
                throw ParseError(std::string("ALOC section: ") + e.what(), payload_at);
            }
            have_alloc = true;
        } else if (tag == "ADAM") {
            ck.optimizer.t = s.u64();
            const std::uint32_t n = s.u32();
            for (std::uint32_t i = 0; i < n; ++i) ck.optimizer.m.push_back(s.matrix());
            for (std::uint32_t i = 0; i < n; ++i) ck.optimizer.v.push_back(s.matrix());
        } else if (tag == "STEP") {
            ck.step = s.u64();
        } else {
            throw ParseError("unknown checkpoint section '" + tag + "'", at);
        }
    }
    if (!(have_geo && have_enc && have_dec && have_alloc))
        throw ParseError("checkpoint is missing model sections (codebook-only file?)", bytes.size());
    const Codebook& cb = ck.model.codebook;
    const ModelGeometry& g = ck.model.geo;
    if (cb.num_sub != g.num_sub || cb.sub_size != g.sub_size || cb.prim_dim != g.prim_dim)
        throw ParseError("codebook header disagrees with GEOM section", 0);
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) { write_file(path, serialize_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const std::string& path) {
    const Bytes b = read_file(path);
    try {
        return deserialize_checkpoint(b);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.message, e.offset);
    }
}

}  // namespace cddvt
