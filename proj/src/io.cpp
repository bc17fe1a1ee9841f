#include "mproto/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mproto/error.hpp"

namespace mproto {

using nlohmann::json;

std::size_t Tensor::element_count() const noexcept {
    std::size_t n = 1;
    for (auto d : dims) {
        n *= d;
    }
    return n;
}

namespace {

constexpr char kMagic[4] = {'M', 'P', 'F', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
    }
    return v;
}

std::vector<std::uint8_t> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("short write to " + path.string());
    }
}

std::string text_of(const fs::path& path) {
    const auto bytes = slurp(path);
    return {bytes.begin(), bytes.end()};
}

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(what + ": " + e.what());
    }
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    if (t.dims.size() > kMaxTensorRank) {
        throw FormatError("tensor rank " + std::to_string(t.dims.size()) + " exceeds " +
                          std::to_string(kMaxTensorRank));
    }
    if (t.values.size() != t.element_count()) {
        throw ShapeError("tensor has " + std::to_string(t.values.size()) + " values for " +
                         std::to_string(t.element_count()) + " elements");
    }
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) {
        put_u32(out, d);
    }
    out.reserve(out.size() + 4 * t.values.size());
    for (double v : t.values) {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8) {
        throw FormatError("tensor: header truncated at byte " + std::to_string(bytes.size()) + " (need 8)");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("tensor: bad magic at byte 0");
    }
    const std::uint32_t rank = get_u32(bytes, 4);
    if (rank > kMaxTensorRank) {
        throw FormatError("tensor: rank " + std::to_string(rank) + " at byte 4 exceeds " +
                          std::to_string(kMaxTensorRank));
    }
    const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
    if (bytes.size() < header) {
        throw FormatError("tensor: dims truncated at byte " + std::to_string(bytes.size()) + " (need " +
                          std::to_string(header) + ")");
    }
    Tensor t;
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.dims.push_back(get_u32(bytes, 8 + 4 * i));
    }
    const std::size_t count = t.element_count();
    const std::size_t expected = header + 4 * count;
    if (bytes.size() < expected) {
        throw FormatError("tensor: payload truncated at byte " + std::to_string(bytes.size()) + " (need " +
                          std::to_string(expected) + ")");
    }
    if (bytes.size() > expected) {
        throw FormatError("tensor: trailing data after byte " + std::to_string(expected));
    }
    t.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        t.values[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, header + 4 * i)));
    }
    return t;
}

void write_tensor(const fs::path& path, const Tensor& t) { spit(path, encode_tensor(t)); }

Tensor read_tensor(const fs::path& path) {
    try {
        return decode_tensor(slurp(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Tensor to_tensor(const Matrix& m) {
    Tensor t;
    t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.values.assign(m.data().begin(), m.data().end());
    return t;
}

Matrix to_matrix(const Tensor& t) {
    if (t.dims.size() == 1) {
        return Matrix(1, t.dims[0], t.values);
    }
    if (t.dims.size() != 2) {
        throw ShapeError("expected a rank-2 tensor, got rank " + std::to_string(t.dims.size()));
    }
    return Matrix(t.dims[0], t.dims[1], t.values);
}

Tensor to_tensor(const std::vector<double>& v) {
    return Tensor{{static_cast<std::uint32_t>(v.size())}, v};
}

Tensor to_tensor(const FeatureMap& f) {
    Tensor t;
    t.dims = {static_cast<std::uint32_t>(f.height()), static_cast<std::uint32_t>(f.width()),
              static_cast<std::uint32_t>(f.dim())};
    t.values.assign(f.cells().data().begin(), f.cells().data().end());
    return t;
}

FeatureMap to_feature_map(const Tensor& t) {
    if (t.dims.size() != 3) {
        throw ShapeError("feature map needs a (height, width, dim) tensor, got rank " +
                         std::to_string(t.dims.size()));
    }
    const std::size_t cells = static_cast<std::size_t>(t.dims[0]) * t.dims[1];
    return FeatureMap(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), Matrix(cells, t.dims[2], t.values));
}

PgmImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&](const char* what) {
        skip_space();
        const std::size_t start = pos;
        long long v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos]) && pos - start < 9) {
            v = v * 10 + (bytes[pos] - '0');
            ++pos;
        }
        if (pos == start) {
            throw FormatError(std::string("pgm: expected ") + what + " at byte " + std::to_string(start));
        }
        return static_cast<int>(v);
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        throw FormatError("pgm: not a binary P5 image (byte 0)");
    }
    pos = 2;
    PgmImage img;
    img.width = number("width");
    img.height = number("height");
    const int maxval = number("maxval");
    if (maxval != 255) {
        throw FormatError("pgm: maxval " + std::to_string(maxval) + " unsupported (need 255)");
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw FormatError("pgm: missing separator before pixel data at byte " + std::to_string(pos));
    }
    ++pos;
    const std::size_t count = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
    if (bytes.size() - pos < count) {
        throw FormatError("pgm: pixel data truncated at byte " + std::to_string(bytes.size()) + " (need " +
                          std::to_string(pos + count) + ")");
    }
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + count));
    return img;
}

std::vector<std::uint8_t> encode_pgm(const PgmImage& img) {
    const std::string header =
        "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

BinaryMask read_mask(const fs::path& path) {
    const PgmImage img = decode_pgm(slurp(path));
    std::vector<std::uint8_t> bits(img.pixels.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
        bits[i] = img.pixels[i] > 127 ? 1 : 0;
    }
    return BinaryMask(img.height, img.width, std::move(bits));
}

void write_mask(const fs::path& path, const BinaryMask& mask) {
    PgmImage img{mask.width(), mask.height(), {}};
    img.pixels.reserve(mask.pixel_count());
    for (auto b : mask.bits()) {
        img.pixels.push_back(b ? 255 : 0);
    }
    spit(path, encode_pgm(img));
}

LabelMap read_label_map(const fs::path& path) {
    const PgmImage img = decode_pgm(slurp(path));
    LabelMap lm{img.height, img.width, {}};
    lm.labels.assign(img.pixels.begin(), img.pixels.end());
    return lm;
}

void write_label_map(const fs::path& path, const LabelMap& labels) {
    PgmImage img{labels.width, labels.height, {}};
    for (ClassId c : labels.labels) {
        if (c < 0 || c > 255) {
            throw LabelError("label map: class id " + std::to_string(c) + " does not fit a byte");
        }
        img.pixels.push_back(static_cast<std::uint8_t>(c));
    }
    spit(path, encode_pgm(img));
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path rel(p);
    return rel.is_absolute() ? rel : base / rel;
}

FeaturePyramid read_pyramid(const fs::path& base, const json& paths) {
    FeaturePyramid out;
    for (const auto& p : paths) {
        out.push_back(to_feature_map(read_tensor(resolve(base, p.get<std::string>()))));
    }
    return out;
}

std::map<ClassId, EmbeddingRecord> embeddings_from(const fs::path& base, const json& list) {
    std::map<ClassId, EmbeddingRecord> out;
    for (const auto& e : list) {
        EmbeddingRecord rec;
        rec.class_id = e.at("class_id").get<ClassId>();
        const Tensor name = read_tensor(resolve(base, e.at("name_tensor").get<std::string>()));
        rec.name_embedding = name.values;
        if (e.contains("description_tensor")) {
            rec.description_embeddings = to_matrix(read_tensor(resolve(base, e.at("description_tensor"))));
            if (rec.description_embeddings.cols() != rec.name_embedding.size()) {
                throw ShapeError("embeddings of class " + std::to_string(rec.class_id) +
                                 ": description width differs from the name embedding");
            }
        } else {
            rec.description_embeddings = Matrix(0, rec.name_embedding.size());
        }
        out.emplace(rec.class_id, std::move(rec));
    }
    return out;
}

std::vector<Scene> scenes_from(const fs::path& base, const json& list) {
    std::vector<Scene> out;
    for (const auto& s : list) {
        Scene scene;
        scene.id = s.at("id").get<std::string>();
        scene.features = read_pyramid(base, s.at("features"));
        scene.labels = read_label_map(resolve(base, s.at("labels").get<std::string>()));
        out.push_back(std::move(scene));
    }
    return out;
}

template <typename F>
auto wrap_json(const std::string& what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw FormatError(what + ": " + e.what());
    }
}

}  // namespace

Dataset read_dataset(const fs::path& manifest) {
    const json j = parse_json(text_of(manifest), manifest.string());
    const fs::path base = manifest.parent_path();
    return wrap_json(manifest.string(), [&] {
        Dataset ds;
        const auto& reg = j.at("registry");
        ds.registry.seen = reg.at("seen").get<std::vector<ClassId>>();
        ds.registry.unseen = reg.value("unseen", std::vector<ClassId>{});
        ds.registry.background = reg.value("background", 0);
        ds.registry.validate();
        ds.embeddings = embeddings_from(base, j.value("embeddings", json::array()));
        ds.train = scenes_from(base, j.value("train", json::array()));
        ds.eval = scenes_from(base, j.value("eval", json::array()));
        return ds;
    });
}

std::map<ClassId, EmbeddingRecord> read_embeddings(const fs::path& manifest) {
    const json j = parse_json(text_of(manifest), manifest.string());
    return wrap_json(manifest.string(),
                     [&] { return embeddings_from(manifest.parent_path(), j.value("embeddings", json::array())); });
}

Episode read_episode(const fs::path& path) {
    const json j = parse_json(text_of(path), path.string());
    const fs::path base = path.parent_path();
    return wrap_json(path.string(), [&] {
        Episode ep;
        ep.background = j.value("background", 0);
        ep.classes = j.at("classes").get<std::vector<ClassId>>();
        ep.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("embeddings")) {
            for (auto& [c, rec] : read_embeddings(resolve(base, j.at("embeddings").get<std::string>()))) {
                if (std::find(ep.classes.begin(), ep.classes.end(), c) != ep.classes.end()) {
                    ep.texts.emplace(c, std::move(rec));
                }
            }
        }
        const auto& q = j.at("query");
        ep.query = read_pyramid(base, q.at("features"));
        if (q.contains("labels")) {
            ep.query_labels = read_label_map(resolve(base, q.at("labels").get<std::string>()));
        }
        for (const auto& s : j.value("shots", json::array())) {
            SupportShot shot;
            shot.features = read_pyramid(base, s.at("features"));
            for (const auto& [key, p] : s.at("masks").items()) {
                shot.masks.emplace(std::stoi(key), read_mask(resolve(base, p.get<std::string>())));
            }
            shot.targets = s.at("targets").get<std::vector<ClassId>>();
            ep.shots.push_back(std::move(shot));
        }
        return ep;
    });
}

void RunConfig::validate() const {
    if (n < 1 || levels < 1 || width < 1) {
        throw ConfigError("config: n, levels and width must be >= 1");
    }
    if (!(lr > 0.0)) {
        throw ConfigError("config: lr must be positive");
    }
    if (steps < 0) {
        throw ConfigError("config: steps must be >= 0");
    }
    LossConfig{lambda, eps}.validate();
}

TrainConfig RunConfig::train_config(int dim) const {
    TrainConfig tc;
    tc.shape = ModelShape{n, levels, width, dim};
    tc.loss = LossConfig{lambda, eps};
    tc.lr = lr;
    tc.steps = steps;
    tc.seed = seed;
    return tc;
}

RunConfig parse_run_config(const std::string& json_text) {
    const json j = parse_json(json_text, "config");
    if (!j.is_object()) {
        throw ConfigError("config: top level must be an object");
    }
    static const std::set<std::string> known = {"n",     "lambda", "levels", "width", "lr",
                                                "seed",  "shot_mode", "steps", "eps", "include_background",
                                                "dataset"};
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    RunConfig cfg;
    try {
        cfg.n = j.value("n", cfg.n);
        cfg.lambda = j.value("lambda", cfg.lambda);
        cfg.levels = j.value("levels", cfg.levels);
        cfg.width = j.value("width", cfg.width);
        cfg.lr = j.value("lr", cfg.lr);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.shot_mode = parse_shot_mode(j.value("shot_mode", to_string(cfg.shot_mode)));
        cfg.steps = j.value("steps", cfg.steps);
        cfg.eps = j.value("eps", cfg.eps);
        cfg.include_background = j.value("include_background", cfg.include_background);
        cfg.dataset = j.value("dataset", cfg.dataset);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

RunConfig read_run_config(const fs::path& path) {
    RunConfig cfg = parse_run_config(text_of(path));
    if (!cfg.dataset.empty()) {
        cfg.dataset = resolve(path.parent_path(), cfg.dataset).string();
    }
    return cfg;
}

std::string to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["n"] = cfg.n;
    j["lambda"] = cfg.lambda;
    j["levels"] = cfg.levels;
    j["width"] = cfg.width;
    j["lr"] = cfg.lr;
    j["seed"] = cfg.seed;
    j["shot_mode"] = to_string(cfg.shot_mode);
    j["steps"] = cfg.steps;
    j["eps"] = cfg.eps;
    j["include_background"] = cfg.include_background;
    j["dataset"] = cfg.dataset;
    return j.dump(2);
}

void write_checkpoint(const fs::path& dir, const TrainState& state) {
    fs::create_directories(dir);
    const auto& s = state.params.shape;
    const auto flat = state.params.flatten();
    nlohmann::ordered_json manifest;
    manifest["shape"] = {{"n", s.n}, {"levels", s.levels}, {"width", s.width}, {"dim", s.dim}};
    manifest["step"] = state.step;
    manifest["lr"] = state.lr;
    manifest["seed"] = state.seed;
    manifest["blocks"] = nlohmann::ordered_json::array();
    for (const auto& b : ModelParams::layout(s)) {
        const std::string file = b.name + ".mpf";
        std::vector<double> values(flat.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                   flat.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size));
        write_tensor(dir / file, to_tensor(values));
        manifest["blocks"].push_back({{"name", b.name}, {"file", file}, {"size", b.size}});
    }
    const std::string text = manifest.dump(2) + "\n";
    spit(dir / "manifest.json", {text.begin(), text.end()});
}

TrainState read_checkpoint(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    const json j = parse_json(text_of(manifest_path), manifest_path.string());
    return wrap_json(manifest_path.string(), [&] {
        const auto& sh = j.at("shape");
        const ModelShape shape{sh.at("n").get<int>(), sh.at("levels").get<int>(), sh.at("width").get<int>(),
                               sh.at("dim").get<int>()};
        TrainState state;
        state.params = ModelParams::zeros(shape);
        state.step = j.at("step").get<long long>();
        state.lr = j.at("lr").get<double>();
        state.seed = j.at("seed").get<std::uint64_t>();
        std::vector<double> flat(state.params.parameter_count());
        std::map<std::string, json> by_name;
        for (const auto& b : j.at("blocks")) {
            by_name.emplace(b.at("name").get<std::string>(), b);
        }
        for (const auto& b : ModelParams::layout(shape)) {
            auto it = by_name.find(b.name);
            if (it == by_name.end()) {
                throw FormatError("checkpoint: missing block " + b.name);
            }
            const Tensor t = read_tensor(dir / it->second.at("file").get<std::string>());
            if (t.values.size() != b.size) {
                throw FormatError("checkpoint: block " + b.name + " has " + std::to_string(t.values.size()) +
                                  " values, expected " + std::to_string(b.size));
            }
            std::copy(t.values.begin(), t.values.end(), flat.begin() + static_cast<std::ptrdiff_t>(b.offset));
        }
        state.params.assign(flat);
        return state;
    });
}

}  // namespace mproto
