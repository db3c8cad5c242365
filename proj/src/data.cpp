#include "gradshield/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "gradshield/network.hpp"

namespace gradshield {

using nlohmann::json;

std::size_t Dataset::masked_count() const {
    std::size_t n = 0;
    for (const AnnotatedExample& ex : examples)
        if (ex.mask) ++n;
    return n;
}

// ---- IDX -------------------------------------------------------------------

namespace {

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
    std::uint8_t buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw FormatError("truncated IDX file: " + path);
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    std::uint8_t buf[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8),
                           std::uint8_t(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace

RawDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw FormatError("cannot open IDX image file: " + images_path);
    if (read_u32_be(img, images_path) != 0x00000803u)
        throw FormatError("bad IDX image magic (want 0x00000803): " + images_path);
    const std::uint32_t count = read_u32_be(img, images_path);
    const std::uint32_t rows = read_u32_be(img, images_path);
    const std::uint32_t cols = read_u32_be(img, images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError("cannot open IDX label file: " + labels_path);
    if (read_u32_be(lab, labels_path) != 0x00000801u)
        throw FormatError("bad IDX label magic (want 0x00000801): " + labels_path);
    const std::uint32_t label_count = read_u32_be(lab, labels_path);
    if (label_count != count)
        throw FormatError("IDX image/label count mismatch: " + std::to_string(count) + " vs " +
                          std::to_string(label_count));

    RawDataset raw;
    raw.rows = rows;
    raw.cols = cols;
    raw.images.reserve(count);
    raw.labels.resize(count);
    std::vector<std::uint8_t> pixel_buf(static_cast<std::size_t>(rows) * cols);
    for (std::uint32_t i = 0; i < count; ++i) {
        img.read(reinterpret_cast<char*>(pixel_buf.data()),
                 static_cast<std::streamsize>(pixel_buf.size()));
        if (!img) throw FormatError("truncated IDX file: " + images_path);
        Tensor x({pixel_buf.size()});
        for (std::size_t p = 0; p < pixel_buf.size(); ++p)
            x[p] = static_cast<double>(pixel_buf[p]) / 255.0;
        raw.images.push_back(std::move(x));
    }
    lab.read(reinterpret_cast<char*>(raw.labels.data()), count);
    if (!lab) throw FormatError("truncated IDX file: " + labels_path);
    return raw;
}

void write_idx_images(const std::string& path, const std::vector<Tensor>& images,
                      std::size_t rows, std::size_t cols) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for write: " + path);
    write_u32_be(out, 0x00000803u);
    write_u32_be(out, static_cast<std::uint32_t>(images.size()));
    write_u32_be(out, static_cast<std::uint32_t>(rows));
    write_u32_be(out, static_cast<std::uint32_t>(cols));
    std::vector<std::uint8_t> buf(rows * cols);
    for (const Tensor& x : images) {
        for (std::size_t p = 0; p < buf.size(); ++p)
            buf[p] = static_cast<std::uint8_t>(
                std::lround(std::clamp(x[p], 0.0, 1.0) * 255.0));
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for write: " + path);
    write_u32_be(out, 0x00000801u);
    write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

// ---- Synthetic digit corpus -------------------------------------------------

namespace {

using Point = std::array<double, 2>;  // (x, y), y grows downward
using Stroke = std::vector<Point>;

Stroke loop(double cx, double cy, double rx, double ry, int nseg = 14) {
    Stroke s;
    for (int i = 0; i <= nseg; ++i) {
        const double a = 2.0 * 3.14159265358979323846 * i / nseg;
        s.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
    }
    return s;
}

std::vector<Stroke> digit_strokes(int d) {
    switch (d) {
        case 0: return {loop(0.5, 0.5, 0.26, 0.40)};
        case 1: return {{{0.36, 0.24}, {0.55, 0.08}, {0.55, 0.92}}};
        case 2:
            return {{{0.27, 0.28},
                     {0.33, 0.13},
                     {0.52, 0.08},
                     {0.70, 0.15},
                     {0.73, 0.32},
                     {0.62, 0.50},
                     {0.32, 0.74},
                     {0.26, 0.92},
                     {0.76, 0.92}}};
        case 3:
            return {{{0.28, 0.16},
                     {0.50, 0.08},
                     {0.70, 0.18},
                     {0.71, 0.33},
                     {0.52, 0.46},
                     {0.72, 0.60},
                     {0.71, 0.79},
                     {0.50, 0.92},
                     {0.27, 0.84}}};
        case 4: return {{{0.62, 0.08}, {0.24, 0.58}, {0.80, 0.58}}, {{0.64, 0.34}, {0.64, 0.92}}};
        case 5:
            return {{{0.72, 0.08},
                     {0.31, 0.08},
                     {0.28, 0.44},
                     {0.55, 0.39},
                     {0.72, 0.53},
                     {0.71, 0.77},
                     {0.50, 0.92},
                     {0.27, 0.84}}};
        case 6:
            return {{{0.64, 0.08}, {0.42, 0.30}, {0.31, 0.55}, {0.32, 0.78}},
                    loop(0.50, 0.70, 0.19, 0.22)};
        case 7: return {{{0.25, 0.08}, {0.75, 0.08}, {0.45, 0.92}}, {{0.36, 0.50}, {0.66, 0.50}}};
        case 8: return {loop(0.5, 0.29, 0.19, 0.21), loop(0.5, 0.71, 0.23, 0.22)};
        case 9:
            return {loop(0.48, 0.32, 0.20, 0.23),
                    {{0.68, 0.32}, {0.67, 0.60}, {0.54, 0.92}}};
    }
    throw FormatError("digit out of range");
}

double segment_distance(double px, double py, const Point& a, const Point& b) {
    const double vx = b[0] - a[0], vy = b[1] - a[1];
    const double wx = px - a[0], wy = py - a[1];
    const double vv = vx * vx + vy * vy;
    double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (a[0] + t * vx), dy = py - (a[1] + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

Tensor render_digit(int digit, std::uint64_t seed, std::size_t rows, std::size_t cols) {
    Rng rng(seed);
    const double angle = rng.uniform(-0.30, 0.30);
    const double scl = rng.uniform(0.72, 1.22);
    const double shear = rng.uniform(-0.20, 0.20);
    const double tx = rng.uniform(-3.0, 3.0);
    const double ty = rng.uniform(-3.0, 3.0);
    const double thick = rng.uniform(0.9, 1.6);
    const double ink = rng.uniform(0.5, 1.0);  // per-image stroke contrast
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double box = 20.0, inset = 4.0;

    std::vector<std::array<Point, 2>> segments;
    for (const Stroke& stroke : digit_strokes(digit)) {
        std::vector<Point> pts;
        for (const Point& p : stroke) {
            // Affine jitter about the glyph centre plus per-point waviness,
            // then placement in the image.
            double x = (p[0] - 0.5) * scl, y = (p[1] - 0.5) * scl;
            x += shear * y;
            const double xr = ca * x - sa * y, yr = sa * x + ca * y;
            pts.push_back({inset + (xr + 0.5) * box + tx + rng.normal(0.0, 0.55),
                           inset + (yr + 0.5) * box + ty + rng.normal(0.0, 0.55)});
        }
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) segments.push_back({pts[i], pts[i + 1]});
    }

    Tensor img({rows * cols});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double py = static_cast<double>(r) + 0.5;
            const double px = static_cast<double>(c) + 0.5;
            double v = 0.0;
            for (const auto& seg : segments) {
                const double dist = segment_distance(px, py, seg[0], seg[1]);
                v = std::max(v, std::clamp((thick - dist) / 0.9 + 0.5, 0.0, 1.0));
            }
            img[r * cols + c] = v * ink;
        }
    }
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = std::clamp(img[i] * rng.uniform(0.85, 1.0) + rng.uniform(0.0, 0.08), 0.0, 1.0);
    return img;
}

}  // namespace

RawDataset synth_digits(std::size_t count, std::uint64_t seed) {
    RawDataset raw;
    raw.rows = 28;
    raw.cols = 28;
    raw.images.resize(count);
    raw.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        raw.labels[i] = static_cast<std::uint8_t>(mix64(seed, 0xd161, i) % 10);
#pragma omp parallel for schedule(static) num_threads(worker_count())
    for (long long i = 0; i < static_cast<long long>(count); ++i) {
        const std::size_t u = static_cast<std::size_t>(i);
        raw.images[u] = render_digit(raw.labels[u], mix64(seed, 0x9e0b, u), raw.rows, raw.cols);
    }
    return raw;
}

// ---- Decoy injection ---------------------------------------------------------

std::vector<double> DecoyConfig::default_intensity_map(std::size_t n_labels) {
    std::vector<double> map(n_labels);
    for (std::size_t y = 0; y < n_labels; ++y)
        map[y] = (255.0 - 25.0 * static_cast<double>(y)) / 255.0;
    return map;
}

void DecoyConfig::validate(std::size_t rows, std::size_t cols, std::size_t n_labels) const {
    if (patch_size == 0 || patch_size > rows || patch_size > cols)
        throw FormatError("decoy config: patch does not fit inside the image");
    if (intensity_map.size() != n_labels)
        throw FormatError("decoy config: intensity map must cover every label");
    for (double v : intensity_map)
        if (!(v >= 0.0 && v <= 1.0))
            throw FormatError("decoy config: intensity values must lie in [0,1]");
    for (std::size_t i = 0; i < intensity_map.size(); ++i)
        for (std::size_t j = i + 1; j < intensity_map.size(); ++j)
            if (intensity_map[i] == intensity_map[j])
                throw FormatError("decoy config: intensity map must be injective over labels");
    for (const auto& [r, c] : corners)
        if (r + patch_size > rows || c + patch_size > cols)
            throw FormatError("decoy config: corner patch exceeds image bounds");
}

std::string DecoyConfig::to_json() const {
    json j;
    j["patch_size"] = patch_size;
    j["intensity_map"] = intensity_map;
    j["train_correlated"] = train_correlated;
    j["seed"] = seed;
    json jc = json::array();
    for (const auto& [r, c] : corners) jc.push_back({r, c});
    j["corners"] = jc;
    return j.dump();
}

DecoyConfig DecoyConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    DecoyConfig cfg;
    cfg.patch_size = j.value("patch_size", std::size_t{4});
    if (j.contains("intensity_map")) cfg.intensity_map = j["intensity_map"].get<std::vector<double>>();
    cfg.train_correlated = j.value("train_correlated", true);
    cfg.seed = j.value("seed", 0ULL);
    if (j.contains("corners"))
        for (const json& jc : j["corners"])
            cfg.corners.emplace_back(jc[0].get<std::size_t>(), jc[1].get<std::size_t>());
    return cfg;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> resolved_corners(const DecoyConfig& cfg,
                                                                  std::size_t rows,
                                                                  std::size_t cols) {
    if (!cfg.corners.empty()) return cfg.corners;
    const std::size_t p = cfg.patch_size;
    return {{0, 0}, {0, cols - p}, {rows - p, 0}, {rows - p, cols - p}};
}

}  // namespace

Dataset inject_decoy(const RawDataset& raw, const DecoyConfig& cfg, Split split, Rng& rng) {
    std::size_t n_labels = 0;
    for (std::uint8_t y : raw.labels) n_labels = std::max<std::size_t>(n_labels, y + 1);
    DecoyConfig effective = cfg;
    if (effective.intensity_map.empty())
        effective.intensity_map = DecoyConfig::default_intensity_map(n_labels);
    effective.validate(raw.rows, raw.cols, n_labels);
    const auto corners = resolved_corners(effective, raw.rows, raw.cols);

    Dataset out;
    out.rows = raw.rows;
    out.cols = raw.cols;
    out.n_groups = static_cast<int>(n_labels);
    out.provenance = std::string("decoy ") + (split == Split::Train ? "train" : "test") + " " +
                     effective.to_json();
    out.examples.reserve(raw.images.size());
    for (std::size_t i = 0; i < raw.images.size(); ++i) {
        AnnotatedExample ex;
        ex.x = raw.images[i];
        ex.label = raw.labels[i];
        std::size_t color = ex.label;
        if (split == Split::Test || !effective.train_correlated)
            color = rng.uniform_index(n_labels);
        const auto [pr, pc] = corners[rng.uniform_index(corners.size())];
        const double value = effective.intensity_map[color];
        Tensor mask = Tensor::zeros({out.width()});
        for (std::size_t r = pr; r < pr + effective.patch_size; ++r)
            for (std::size_t c = pc; c < pc + effective.patch_size; ++c) {
                ex.x[r * raw.cols + c] = value;
                mask[r * raw.cols + c] = 1.0;
            }
        ex.mask = std::move(mask);
        ex.group = split == Split::Train ? static_cast<int>(ex.label) : static_cast<int>(color);
        out.examples.push_back(std::move(ex));
    }
    return out;
}

Dataset subsample_masks(Dataset dataset, double keep_ratio, Rng& rng) {
    if (!(keep_ratio >= 0.0 && keep_ratio <= 1.0))
        throw FormatError("subsample_masks: keep_ratio must lie in [0,1]");
    const std::size_t n = dataset.size();
    const std::size_t keep = static_cast<std::size_t>(keep_ratio * static_cast<double>(n));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<bool> keep_mask(n, false);
    for (std::size_t i = 0; i < keep; ++i) keep_mask[order[i]] = true;
    for (std::size_t i = 0; i < n; ++i)
        if (!keep_mask[i]) dataset.examples[i].mask.reset();
    dataset.provenance += " | mask_keep_ratio=" + std::to_string(keep_ratio);
    return dataset;
}

// ---- Mask corruption ---------------------------------------------------------

CorruptKind corrupt_kind_from_string(const std::string& s) {
    if (s == "misposition") return CorruptKind::Misposition;
    if (s == "shift") return CorruptKind::Shift;
    if (s == "shrink") return CorruptKind::Shrink;
    if (s == "dilation") return CorruptKind::Dilation;
    throw FormatError("unknown corruption kind: " + s);
}

std::string to_string(CorruptKind k) {
    switch (k) {
        case CorruptKind::Misposition: return "misposition";
        case CorruptKind::Shift: return "shift";
        case CorruptKind::Shrink: return "shrink";
        case CorruptKind::Dilation: return "dilation";
    }
    return "?";
}

namespace {

struct Rect {
    std::size_t r0, c0, r1, c1;  // half-open
    std::size_t height() const { return r1 - r0; }
    std::size_t width() const { return c1 - c0; }
    bool overlaps(const Rect& o) const {
        return r0 < o.r1 && o.r0 < r1 && c0 < o.c1 && o.c0 < c1;
    }
};

Rect detect_patch(const Tensor& mask, std::size_t rows, std::size_t cols) {
    std::size_t r0 = rows, c0 = cols, r1 = 0, c1 = 0, count = 0;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            if (mask[r * cols + c] > 0.0) {
                r0 = std::min(r0, r);
                c0 = std::min(c0, c);
                r1 = std::max(r1, r + 1);
                c1 = std::max(c1, c + 1);
                ++count;
            }
    if (count == 0) throw FormatError("unsupported mask: empty");
    Rect rect{r0, c0, r1, c1};
    if (count != rect.height() * rect.width())
        throw FormatError("unsupported mask: not a solid rectangular patch");
    for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c)
            if (mask[r * cols + c] != 1.0)
                throw FormatError("unsupported mask: patch entries must be exactly 1");
    return rect;
}

Tensor rect_mask(const Rect& rect, std::size_t rows, std::size_t cols) {
    Tensor m = Tensor::zeros({rows * cols});
    for (std::size_t r = rect.r0; r < rect.r1; ++r)
        for (std::size_t c = rect.c0; c < rect.c1; ++c) m[r * cols + c] = 1.0;
    return m;
}

Rect corrupt_rect(const Rect& patch, CorruptKind kind, std::size_t rows, std::size_t cols,
                  Rng& rng) {
    const std::size_t ph = patch.height(), pw = patch.width();
    switch (kind) {
        case CorruptKind::Misposition: {
            // Uniform over positions with zero overlap with the true patch.
            while (true) {
                const std::size_t r = rng.uniform_index(rows - ph + 1);
                const std::size_t c = rng.uniform_index(cols - pw + 1);
                Rect cand{r, c, r + ph, c + pw};
                if (!cand.overlaps(patch)) return cand;
            }
        }
        case CorruptKind::Shift: {
            const std::size_t s = std::max<std::size_t>(1, ph / 2);
            std::vector<Rect> candidates;
            const long long r = static_cast<long long>(patch.r0);
            const long long c = static_cast<long long>(patch.c0);
            const std::array<std::array<long long, 2>, 4> dirs{
                {{-(long long)s, 0}, {(long long)s, 0}, {0, -(long long)s}, {0, (long long)s}}};
            for (const auto& d : dirs) {
                const long long nr = r + d[0], nc = c + d[1];
                if (nr < 0 || nc < 0) continue;
                if (static_cast<std::size_t>(nr) + ph > rows) continue;
                if (static_cast<std::size_t>(nc) + pw > cols) continue;
                candidates.push_back(Rect{static_cast<std::size_t>(nr),
                                          static_cast<std::size_t>(nc),
                                          static_cast<std::size_t>(nr) + ph,
                                          static_cast<std::size_t>(nc) + pw});
            }
            return candidates[rng.uniform_index(candidates.size())];
        }
        case CorruptKind::Shrink: {
            const std::size_t nh = std::max<std::size_t>(1, ph / 2);
            const std::size_t nw = std::max<std::size_t>(1, pw / 2);
            const std::size_t r = patch.r0 + (ph - nh) / 2;
            const std::size_t c = patch.c0 + (pw - nw) / 2;
            return Rect{r, c, r + nh, c + nw};
        }
        case CorruptKind::Dilation: {
            // Side doubled about the same centre, clipped to the image.
            const long long r = static_cast<long long>(patch.r0) - static_cast<long long>(ph) / 2;
            const long long c = static_cast<long long>(patch.c0) - static_cast<long long>(pw) / 2;
            const std::size_t r0 = static_cast<std::size_t>(std::max(0LL, r));
            const std::size_t c0 = static_cast<std::size_t>(std::max(0LL, c));
            const std::size_t r1 = std::min<std::size_t>(
                rows, static_cast<std::size_t>(std::max(0LL, r + 2 * static_cast<long long>(ph))));
            const std::size_t c1 = std::min<std::size_t>(
                cols, static_cast<std::size_t>(std::max(0LL, c + 2 * static_cast<long long>(pw))));
            return Rect{r0, c0, r1, c1};
        }
    }
    throw FormatError("unknown corruption kind");
}

}  // namespace

Dataset corrupt_masks(Dataset dataset, CorruptKind kind, double corrupt_ratio, Rng& rng) {
    if (!(corrupt_ratio >= 0.0 && corrupt_ratio <= 1.0))
        throw FormatError("corrupt_masks: corrupt_ratio must lie in [0,1]");
    std::vector<std::size_t> masked;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (dataset.examples[i].mask) masked.push_back(i);
    rng.shuffle(masked);
    const std::size_t n_corrupt =
        static_cast<std::size_t>(corrupt_ratio * static_cast<double>(masked.size()));
    for (std::size_t j = 0; j < n_corrupt; ++j) {
        AnnotatedExample& ex = dataset.examples[masked[j]];
        const Rect patch = detect_patch(*ex.mask, dataset.rows, dataset.cols);
        const Rect corrupted = corrupt_rect(patch, kind, dataset.rows, dataset.cols, rng);
        ex.mask = rect_mask(corrupted, dataset.rows, dataset.cols);
    }
    dataset.provenance += " | corrupt kind=" + to_string(kind) +
                          " ratio=" + std::to_string(corrupt_ratio);
    return dataset;
}

// ---- Bundle IO ----------------------------------------------------------------

namespace {

void write_i64_array(const std::string& path, const std::vector<std::int64_t>& v) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for write: " + path);
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(std::int64_t)));
}

std::vector<std::int64_t> read_i64_array(const std::string& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("missing array file: " + path);
    if (in.tellg() != static_cast<std::streamsize>(count * sizeof(std::int64_t)))
        throw FormatError("array file size does not match manifest: " + path);
    in.seekg(0);
    std::vector<std::int64_t> v(count);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(count * sizeof(std::int64_t)));
    return v;
}

}  // namespace

void write_bundle(const Dataset& dataset, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::size_t n = dataset.size();
    const std::size_t d = dataset.width();

    Tensor images({n, d});
    std::vector<std::int64_t> labels(n), groups(n), mask_index;
    std::vector<double> masks;
    for (std::size_t i = 0; i < n; ++i) {
        const AnnotatedExample& ex = dataset.examples[i];
        if (ex.x.size() != d) throw FormatError("bundle: example width mismatch");
        std::memcpy(images.data() + i * d, ex.x.data(), d * sizeof(double));
        labels[i] = static_cast<std::int64_t>(ex.label);
        groups[i] = ex.group;
        if (ex.mask) {
            mask_index.push_back(static_cast<std::int64_t>(i));
            masks.insert(masks.end(), ex.mask->data(), ex.mask->data() + d);
        }
    }
    write_f64_array(dir + "/images.f64", images);
    write_i64_array(dir + "/labels.i64", labels);
    write_i64_array(dir + "/groups.i64", groups);
    write_i64_array(dir + "/mask_index.i64", mask_index);
    write_f64_array(dir + "/masks.f64", Tensor({mask_index.size(), d}, std::move(masks)));

    json manifest;
    manifest["count"] = n;
    manifest["rows"] = dataset.rows;
    manifest["cols"] = dataset.cols;
    manifest["n_groups"] = dataset.n_groups;
    manifest["masked_count"] = mask_index.size();
    manifest["provenance"] = dataset.provenance;
    std::ofstream out(dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
}

Dataset read_bundle(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw FormatError("missing bundle manifest: " + dir + "/manifest.json");
    json manifest = json::parse(in);
    Dataset out;
    const std::size_t n = manifest.at("count").get<std::size_t>();
    out.rows = manifest.at("rows").get<std::size_t>();
    out.cols = manifest.at("cols").get<std::size_t>();
    out.n_groups = manifest.at("n_groups").get<int>();
    out.provenance = manifest.value("provenance", "");
    const std::size_t masked = manifest.at("masked_count").get<std::size_t>();
    const std::size_t d = out.width();

    Tensor images = read_f64_array(dir + "/images.f64", {n, d});
    std::vector<std::int64_t> labels = read_i64_array(dir + "/labels.i64", n);
    std::vector<std::int64_t> groups = read_i64_array(dir + "/groups.i64", n);
    std::vector<std::int64_t> mask_index = read_i64_array(dir + "/mask_index.i64", masked);
    Tensor masks = read_f64_array(dir + "/masks.f64", {masked, d});

    out.examples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        AnnotatedExample& ex = out.examples[i];
        ex.x = Tensor({d});
        std::memcpy(ex.x.data(), images.data() + i * d, d * sizeof(double));
        ex.label = static_cast<std::size_t>(labels[i]);
        ex.group = static_cast<int>(groups[i]);
    }
    for (std::size_t j = 0; j < masked; ++j) {
        const std::size_t i = static_cast<std::size_t>(mask_index[j]);
        if (i >= n) throw FormatError("bundle: mask index out of range");
        Tensor m({d});
        std::memcpy(m.data(), masks.data() + j * d, d * sizeof(double));
        out.examples[i].mask = std::move(m);
    }
    return out;
}

}  // namespace gradshield
