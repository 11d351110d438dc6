#include "inst4d/serialization.hpp"

#include <fstream>

#include <json.hpp>

#include "inst4d/errors.hpp"

namespace inst4d {

using nlohmann::json;

namespace {

json vec3_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
json vec4_json(const Vec4& v) { return json::array({v[0], v[1], v[2], v[3]}); }

Vec3 vec3_from(const json& j) { return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()}; }

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from(const json& j) {
    const int rows = static_cast<int>(j.size());
    const int cols = rows == 0 ? 0 : static_cast<int>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = j[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
    return m;
}

void write_json(const json& doc, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << doc.dump(2) << "\n";
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPrerequisiteError("missing file: " + path.string());
    json doc = json::parse(in);
    if (doc.value("format_version", 0) != 1) {
        throw FormatError(path.filename().string() + ": unsupported format_version");
    }
    return doc;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const GaussianSet& g = ckpt.gaussians;

    json gj;
    gj["format_version"] = 1;
    gj["num_instances"] = g.num_instances;
    gj["feature_dim"] = g.feature_dim();
    gj["count"] = g.size();
    gj["timesteps"] = g.timesteps();
    json colors = json::array(), logits = json::array(), scales = json::array(),
         rots = json::array(), feats = json::array(), labels = json::array();
    for (int i = 0; i < g.size(); ++i) {
        colors.push_back(vec3_json(g.colors[static_cast<size_t>(i)]));
        logits.push_back(g.opacity_logits[static_cast<size_t>(i)]);
        scales.push_back(vec3_json(g.log_scales[static_cast<size_t>(i)]));
        rots.push_back(vec4_json(g.rotations[static_cast<size_t>(i)].vec4()));
        json f = json::array();
        for (int c = 0; c < g.feature_dim(); ++c) f.push_back(g.features(c, i));
        feats.push_back(std::move(f));
        labels.push_back(g.labels[static_cast<size_t>(i)]);
    }
    gj["colors"] = std::move(colors);
    gj["opacity_logits"] = std::move(logits);
    gj["log_scales"] = std::move(scales);
    gj["rotations"] = std::move(rots);
    gj["features"] = std::move(feats);
    gj["labels"] = std::move(labels);
    json means = json::array(), rots_t = json::array();
    for (int t = 0; t < g.timesteps(); ++t) {
        json mt = json::array(), rt = json::array();
        for (int i = 0; i < g.size(); ++i) {
            mt.push_back(vec3_json(g.means[static_cast<size_t>(t)][static_cast<size_t>(i)]));
            rt.push_back(vec4_json(g.rotations_t[static_cast<size_t>(t)][static_cast<size_t>(i)].vec4()));
        }
        means.push_back(std::move(mt));
        rots_t.push_back(std::move(rt));
    }
    gj["means"] = std::move(means);
    gj["rotations_t"] = std::move(rots_t);
    write_json(gj, dir / "gaussians.json");

    json dj;
    dj["format_version"] = 1;
    dj["activation"] =
        ckpt.decoder.activation == IdentityDecoder::Activation::kTanh ? "tanh" : "relu";
    dj["w1"] = matrix_json(ckpt.decoder.w1);
    dj["b1"] = matrix_json(ckpt.decoder.b1);
    dj["w2"] = matrix_json(ckpt.decoder.w2);
    dj["b2"] = matrix_json(ckpt.decoder.b2);
    write_json(dj, dir / "decoder.json");

    json pj;
    pj["format_version"] = 1;
    json views = json::array();
    for (const PermutationRecord& rec : ckpt.permutations) {
        json e;
        e["view"] = rec.view;
        json zflat = json::array();  // row-major
        for (int r = 0; r < rec.z.rows(); ++r)
            for (int c = 0; c < rec.z.cols(); ++c) zflat.push_back(rec.z(r, c));
        e["k"] = rec.z.rows();
        e["z"] = std::move(zflat);
        e["local_to_canonical"] = rec.local_to_canonical;
        e["confidence"] = rec.confidence;
        views.push_back(std::move(e));
    }
    pj["views"] = std::move(views);
    write_json(pj, dir / "permutations.json");

    if (ckpt.has_scaffold) {
        json sj;
        sj["format_version"] = 1;
        json bases = json::array();
        for (const MotionBase& b : ckpt.scaffold.bases) {
            bases.push_back({{"instance_label", b.instance_label},
                             {"source_gaussian", b.source_gaussian}});
        }
        sj["bases"] = std::move(bases);
        json atts = json::array();
        for (const Attachment& a : ckpt.scaffold.attachments) {
            atts.push_back({{"gaussian", a.gaussian}, {"bases", a.bases}, {"weights", a.weights}});
        }
        sj["attachments"] = std::move(atts);
        json edges = json::array();
        for (const auto& [j, k] : ckpt.scaffold.edges) edges.push_back(json::array({j, k}));
        sj["edges"] = std::move(edges);
        write_json(sj, dir / "scaffold.json");

        std::vector<RigidUnit> tracks;
        for (const MotionBase& b : ckpt.scaffold.bases) {
            RigidUnit u;
            u.instance_label = b.instance_label;
            u.trajectory = b.trajectory;
            tracks.push_back(std::move(u));
        }
        save_trajectories(dir / "trajectories.bin", dir / "trajectories.json", tracks);
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    Checkpoint ckpt;
    json gj = read_json(dir / "gaussians.json");
    GaussianSet& g = ckpt.gaussians;
    const int n = gj.at("count").get<int>();
    const int c = gj.at("feature_dim").get<int>();
    const int t_count = gj.at("timesteps").get<int>();
    g.resize(n, c);
    g.num_instances = gj.at("num_instances").get<int>();
    for (int i = 0; i < n; ++i) {
        g.colors[static_cast<size_t>(i)] = vec3_from(gj["colors"][static_cast<size_t>(i)]);
        g.opacity_logits[static_cast<size_t>(i)] = gj["opacity_logits"][static_cast<size_t>(i)].get<double>();
        g.log_scales[static_cast<size_t>(i)] = vec3_from(gj["log_scales"][static_cast<size_t>(i)]);
        const json& r = gj["rotations"][static_cast<size_t>(i)];
        g.rotations[static_cast<size_t>(i)] =
            Quat(r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>());
        for (int ch = 0; ch < c; ++ch) g.features(ch, i) = gj["features"][static_cast<size_t>(i)][static_cast<size_t>(ch)].get<double>();
        g.labels[static_cast<size_t>(i)] = gj["labels"][static_cast<size_t>(i)].get<int>();
    }
    g.means.clear();
    g.rotations_t.clear();
    for (int t = 0; t < t_count; ++t) {
        std::vector<Vec3> mt(static_cast<size_t>(n));
        std::vector<Quat> rt(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            mt[static_cast<size_t>(i)] = vec3_from(gj["means"][static_cast<size_t>(t)][static_cast<size_t>(i)]);
            const json& r = gj["rotations_t"][static_cast<size_t>(t)][static_cast<size_t>(i)];
            rt[static_cast<size_t>(i)] =
                Quat(r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>());
        }
        g.means.push_back(std::move(mt));
        g.rotations_t.push_back(std::move(rt));
    }

    json dj = read_json(dir / "decoder.json");
    ckpt.decoder.activation = dj.at("activation").get<std::string>() == "tanh"
                                  ? IdentityDecoder::Activation::kTanh
                                  : IdentityDecoder::Activation::kRelu;
    ckpt.decoder.w1 = matrix_from(dj["w1"]);
    ckpt.decoder.w2 = matrix_from(dj["w2"]);
    Eigen::MatrixXd b1 = matrix_from(dj["b1"]);
    Eigen::MatrixXd b2 = matrix_from(dj["b2"]);
    ckpt.decoder.b1 = b1.col(0);
    ckpt.decoder.b2 = b2.col(0);

    json pj = read_json(dir / "permutations.json");
    for (const json& e : pj.at("views")) {
        PermutationRecord rec;
        rec.view = e.at("view").get<int>();
        const int k = e.at("k").get<int>();
        rec.z.resize(k, k);
        const json& zflat = e.at("z");
        for (int r = 0; r < k; ++r)
            for (int col = 0; col < k; ++col) rec.z(r, col) = zflat[static_cast<size_t>(r * k + col)].get<double>();
        rec.local_to_canonical = e.at("local_to_canonical").get<std::vector<int>>();
        rec.confidence = e.at("confidence").get<double>();
        ckpt.permutations.push_back(std::move(rec));
    }

    if (std::filesystem::exists(dir / "scaffold.json")) {
        ckpt.has_scaffold = true;
        json sj = read_json(dir / "scaffold.json");
        auto tracks = load_trajectories(dir / "trajectories.bin", dir / "trajectories.json");
        size_t bi = 0;
        for (const json& e : sj.at("bases")) {
            MotionBase b;
            b.instance_label = e.at("instance_label").get<int>();
            b.source_gaussian = e.at("source_gaussian").get<int>();
            b.trajectory = tracks[bi++].trajectory;
            ckpt.scaffold.bases.push_back(std::move(b));
        }
        for (const json& e : sj.at("attachments")) {
            Attachment a;
            a.gaussian = e.at("gaussian").get<int>();
            a.bases = e.at("bases").get<std::vector<int>>();
            a.weights = e.at("weights").get<std::vector<double>>();
            ckpt.scaffold.attachments.push_back(std::move(a));
        }
        for (const json& e : sj.at("edges")) {
            ckpt.scaffold.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
        }
    }
    return ckpt;
}

}  // namespace inst4d
