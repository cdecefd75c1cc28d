#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "lithoseg/loss/losses.hpp"
#include "lithoseg/nn/dvfnet.hpp"
#include "lithoseg/nn/segnet.hpp"

namespace lithoseg {

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

// How the motion branch feeds the first segmentation network: either the mean
// of the two displacement fields (2 channels) or the mean of the two warped
// grayscale frames (1 channel).
struct PipelineConfig {
  enum class Wiring { dvf_input, warped_input };

  Wiring wiring = Wiring::warped_input;
  SegNetConfig seg1;     // motion-branch segmentation network
  SegNetConfig seg2;     // RGB-branch segmentation network (used for inference)
  DVFNetConfig dvfnet;   // shared architecture of both registration networks
  LossConfig<double> loss;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 2;
  int epochs = 100;
  uint64_t seed = 0;
  std::string augmentation = "rbc_equalize";  // none | rbc_equalize | rbc_clahe | full
  // When false, the motion branch's output is detached before entering the
  // first segmentation network, so segmentation gradients stop at the DVFs.
  bool end_to_end = true;

  static Wiring parse_wiring(const std::string& s) {
    if (s == "dvf_input") return Wiring::dvf_input;
    if (s == "warped_input") return Wiring::warped_input;
    throw std::invalid_argument("unknown wiring mode: " + s);
  }
  static std::string wiring_name(Wiring w) {
    return w == Wiring::dvf_input ? "dvf_input" : "warped_input";
  }

  // Channel counts follow from the wiring; both branches segment 3 classes.
  PipelineConfig normalized() const {
    PipelineConfig c = *this;
    c.seg1.in_channels = c.wiring == Wiring::dvf_input ? 2 : 1;
    c.seg1.num_classes = 3;
    c.seg2.in_channels = 3;
    c.seg2.num_classes = 3;
    return c;
  }

  void validate() const {
    seg1.validate();
    seg2.validate();
    dvfnet.validate();
    check(seg1.in_channels == (wiring == Wiring::dvf_input ? 2 : 1),
          "pipeline: branch-1 channels inconsistent with wiring");
    check(seg2.in_channels == 3, "pipeline: branch-2 expects RGB input");
    check(lr > 0, "pipeline: learning rate must be positive");
    check(batch_size >= 1, "pipeline: batch_size must be >= 1");
    check(epochs >= 1, "pipeline: epochs must be >= 1");
    check(augmentation == "none" || augmentation == "rbc_equalize" ||
              augmentation == "rbc_clahe" || augmentation == "full",
          "pipeline: unknown augmentation preset '" + augmentation + "'");
  }

  // Reduced scale that trains in minutes on one desktop core; the struct
  // defaults above follow the source protocol (batch 2, lr 1e-3, 100 epochs,
  // base width 64).
  static PipelineConfig desk_scale() {
    PipelineConfig c;
    c.seg1.base_width = 32;
    c.seg2.base_width = 32;
    c.epochs = 15;
    return c;
  }
};

template <class S>
LossConfig<S> loss_config_cast(const LossConfig<double>& in) {
  LossConfig<S> out;
  out.gamma = S(in.gamma);
  out.alpha = S(in.alpha);
  out.beta = S(in.beta);
  out.zeta = S(in.zeta);
  out.theta0 = in.theta0;
  out.theta = in.theta;
  out.epsilon = S(in.epsilon);
  out.prob_floor = S(in.prob_floor);
  out.boundary_classes = in.boundary_classes;
  return out;
}

// ---------------------------------------------------------------------------
// JSON round trip (strict: unknown keys are rejected)
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  check(j.is_object(), "config: '" + where + "' must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed) ok |= item.key() == k;
    check(ok, "config: unknown key '" + item.key() + "' in " + where);
  }
}

inline nlohmann::json segnet_to_json(const SegNetConfig& c) {
  return {{"variant", SegNetConfig::variant_name(c.variant)},
          {"base_width", c.base_width},
          {"use_attention", c.use_attention},
          {"use_aspp", c.use_aspp},
          {"dilation_schedule", c.encoder_dilation_schedule},
          {"aspp_rates", c.aspp_rates},
          {"r2_recurrence", c.r2_recurrence},
          {"r2_residual", c.r2_residual}};
}

inline void segnet_from_json(const nlohmann::json& j, SegNetConfig& c, const std::string& where) {
  reject_unknown_keys(j,
                      {"variant", "base_width", "use_attention", "use_aspp", "dilation_schedule",
                       "aspp_rates", "r2_recurrence", "r2_residual"},
                      where);
  if (j.contains("variant")) c.variant = SegNetConfig::parse_variant(j["variant"].get<std::string>());
  if (j.contains("base_width")) c.base_width = j["base_width"].get<int>();
  if (j.contains("use_attention")) c.use_attention = j["use_attention"].get<bool>();
  if (j.contains("use_aspp")) c.use_aspp = j["use_aspp"].get<bool>();
  if (j.contains("dilation_schedule"))
    c.encoder_dilation_schedule = j["dilation_schedule"].get<std::vector<int>>();
  if (j.contains("aspp_rates")) c.aspp_rates = j["aspp_rates"].get<std::vector<int>>();
  if (j.contains("r2_recurrence")) c.r2_recurrence = j["r2_recurrence"].get<int>();
  if (j.contains("r2_residual")) c.r2_residual = j["r2_residual"].get<bool>();
}

}  // namespace detail

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"wiring", PipelineConfig::wiring_name(c.wiring)},
          {"seg1", detail::segnet_to_json(c.seg1)},
          {"seg2", detail::segnet_to_json(c.seg2)},
          {"dvfnet",
           {{"widths", c.dvfnet.widths},
            {"refine_width", c.dvfnet.refine_width},
            {"kernel", c.dvfnet.kernel},
            {"final_elu", c.dvfnet.final_elu}}},
          {"loss",
           {{"gamma", c.loss.gamma},
            {"alpha", c.loss.alpha},
            {"beta", c.loss.beta},
            {"zeta", c.loss.zeta},
            {"theta0", c.loss.theta0},
            {"theta", c.loss.theta},
            {"epsilon", c.loss.epsilon},
            {"prob_floor", c.loss.prob_floor},
            {"boundary_classes", c.loss.boundary_classes}}},
          {"optimizer", {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}}},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"augmentation", c.augmentation},
          {"end_to_end", c.end_to_end}};
}

// Applies the keys present in `j` on top of `base`; missing keys keep their
// defaults, unknown keys raise.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j,
                                                PipelineConfig base = PipelineConfig{}) {
  detail::reject_unknown_keys(j,
                              {"wiring", "seg1", "seg2", "dvfnet", "loss", "optimizer",
                               "batch_size", "epochs", "seed", "augmentation", "end_to_end"},
                              "pipeline config");
  PipelineConfig c = base;
  if (j.contains("wiring")) c.wiring = PipelineConfig::parse_wiring(j["wiring"].get<std::string>());
  if (j.contains("seg1")) detail::segnet_from_json(j["seg1"], c.seg1, "seg1");
  if (j.contains("seg2")) detail::segnet_from_json(j["seg2"], c.seg2, "seg2");
  if (j.contains("dvfnet")) {
    const auto& d = j["dvfnet"];
    detail::reject_unknown_keys(d, {"widths", "refine_width", "kernel", "final_elu"}, "dvfnet");
    if (d.contains("widths")) c.dvfnet.widths = d["widths"].get<std::vector<int>>();
    if (d.contains("refine_width")) c.dvfnet.refine_width = d["refine_width"].get<int>();
    if (d.contains("kernel")) c.dvfnet.kernel = d["kernel"].get<int>();
    if (d.contains("final_elu")) c.dvfnet.final_elu = d["final_elu"].get<bool>();
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    detail::reject_unknown_keys(l,
                                {"gamma", "alpha", "beta", "zeta", "theta0", "theta", "epsilon",
                                 "prob_floor", "boundary_classes"},
                                "loss");
    if (l.contains("gamma")) c.loss.gamma = l["gamma"].get<double>();
    if (l.contains("alpha")) c.loss.alpha = l["alpha"].get<double>();
    if (l.contains("beta")) c.loss.beta = l["beta"].get<double>();
    if (l.contains("zeta")) c.loss.zeta = l["zeta"].get<double>();
    if (l.contains("theta0")) c.loss.theta0 = l["theta0"].get<int>();
    if (l.contains("theta")) c.loss.theta = l["theta"].get<int>();
    if (l.contains("epsilon")) c.loss.epsilon = l["epsilon"].get<double>();
    if (l.contains("prob_floor")) c.loss.prob_floor = l["prob_floor"].get<double>();
    if (l.contains("boundary_classes"))
      c.loss.boundary_classes = l["boundary_classes"].get<std::vector<int>>();
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    detail::reject_unknown_keys(o, {"lr", "beta1", "beta2"}, "optimizer");
    if (o.contains("lr")) c.lr = o["lr"].get<double>();
    if (o.contains("beta1")) c.beta1 = o["beta1"].get<double>();
    if (o.contains("beta2")) c.beta2 = o["beta2"].get<double>();
  }
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
  if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
  if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  if (j.contains("augmentation")) c.augmentation = j["augmentation"].get<std::string>();
  if (j.contains("end_to_end")) c.end_to_end = j["end_to_end"].get<bool>();
  return c;
}

// ---------------------------------------------------------------------------
// Trained bundle: the four networks plus the config that rebuilds them
// ---------------------------------------------------------------------------

template <class S>
struct TrainedBundle {
  PipelineConfig cfg;
  SegNet<S> seg1, seg2;
  DVFNet<S> dvf_a, dvf_b;
  int best_epoch = 0;   // 1-based epoch whose weights are stored; 0 = untrained
  int num_workers = 1;  // data loading is single-threaded: bit-deterministic

  TrainedBundle() = default;
  TrainedBundle(TrainedBundle&&) = default;
  TrainedBundle& operator=(TrainedBundle&&) = default;
  // Networks hold pointers into their own parameter stores; copying would
  // alias the source bundle's weights.
  TrainedBundle(const TrainedBundle&) = delete;
  TrainedBundle& operator=(const TrainedBundle&) = delete;
};

template <class S>
TrainedBundle<S> build_bundle(const PipelineConfig& in) {
  PipelineConfig cfg = in.normalized();
  cfg.validate();
  TrainedBundle<S> b;
  b.cfg = cfg;
  b.seg1 = build_segnet<S>(cfg.seg1, hash_combine(cfg.seed, 1));
  b.seg2 = build_segnet<S>(cfg.seg2, hash_combine(cfg.seed, 2));
  b.dvf_a = build_dvfnet<S>(cfg.dvfnet, hash_combine(cfg.seed, 3));
  b.dvf_b = build_dvfnet<S>(cfg.dvfnet, hash_combine(cfg.seed, 4));
  return b;
}

// ---------------------------------------------------------------------------
// Checkpoint file: magic, version, JSON header, raw float32 blobs
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kBundleMagic[4] = {'L', 'S', 'G', 'B'};
constexpr uint32_t kBundleVersion = 1;

// Uniform view over the serializable state of one network.
template <class S, class Net>
nlohmann::json net_header(const Net& net) {
  nlohmann::json j;
  j["params"] = nlohmann::json::array();
  for (const auto& p : net.params.items)
    j["params"].push_back({{"name", p.name},
                           {"shape", {p.value.n, p.value.c, p.value.h, p.value.w}}});
  j["bn"] = nlohmann::json::array();
  for (const auto& s : net.bn) j["bn"].push_back({{"name", s.name}, {"c", s.stats.running_mean.c}});
  return j;
}

template <class S, class Net>
void write_net_blobs(std::ofstream& os, const Net& net) {
  auto dump = [&os](const Tensor<S>& t) {
    static_assert(sizeof(S) == 4 || sizeof(S) == 8);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             std::streamsize(size_t(t.size()) * sizeof(S)));
  };
  for (const auto& p : net.params.items) dump(p.value);
  for (const auto& s : net.bn) {
    dump(s.stats.running_mean);
    dump(s.stats.running_var);
  }
}

template <class S, class Net>
void read_net_blobs(std::ifstream& is, Net& net, const nlohmann::json& header,
                    const std::string& net_name) {
  const auto& params = header["params"];
  check(params.size() == net.params.items.size(),
        "bundle: parameter list mismatch for " + net_name);
  auto slurp = [&is, &net_name](Tensor<S>& t) {
    is.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(size_t(t.size()) * sizeof(S)));
    check(bool(is), "bundle: truncated file while reading " + net_name);
  };
  size_t i = 0;
  for (auto& p : net.params.items) {
    const auto& h = params[i++];
    check(h["name"].get<std::string>() == p.name,
          "bundle: parameter name mismatch for " + net_name + ": " + p.name);
    const auto sh = h["shape"].get<std::vector<Eigen::Index>>();
    check(sh.size() == 4 && sh[0] == p.value.n && sh[1] == p.value.c && sh[2] == p.value.h &&
              sh[3] == p.value.w,
          "bundle: shape mismatch for " + net_name + "." + p.name);
    slurp(p.value);
  }
  const auto& bns = header["bn"];
  check(bns.size() == net.bn.size(), "bundle: batchnorm list mismatch for " + net_name);
  i = 0;
  for (auto& s : net.bn) {
    const auto& h = bns[i++];
    check(h["name"].get<std::string>() == s.name,
          "bundle: batchnorm name mismatch for " + net_name + ": " + s.name);
    check(h["c"].get<Eigen::Index>() == s.stats.running_mean.c,
          "bundle: batchnorm width mismatch for " + net_name + "." + s.name);
    slurp(s.stats.running_mean);
    slurp(s.stats.running_var);
  }
}

}  // namespace detail

template <class S>
void save_bundle(const TrainedBundle<S>& b, const std::string& path) {
  nlohmann::json header;
  header["version"] = detail::kBundleVersion;
  header["config"] = to_json(b.cfg);
  header["best_epoch"] = b.best_epoch;
  header["num_workers"] = b.num_workers;
  header["deterministic"] = true;
  header["scalar_bytes"] = sizeof(S);
  header["nets"] = {{"seg1", detail::net_header<S>(b.seg1)},
                    {"seg2", detail::net_header<S>(b.seg2)},
                    {"dvf_a", detail::net_header<S>(b.dvf_a)},
                    {"dvf_b", detail::net_header<S>(b.dvf_b)}};
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(bool(os), "bundle: cannot open '" + path + "' for writing");
  os.write(detail::kBundleMagic, 4);
  uint32_t v = detail::kBundleVersion;
  os.write(reinterpret_cast<const char*>(&v), 4);
  uint64_t len = hs.size();
  os.write(reinterpret_cast<const char*>(&len), 8);
  os.write(hs.data(), std::streamsize(hs.size()));
  detail::write_net_blobs<S>(os, b.seg1);
  detail::write_net_blobs<S>(os, b.seg2);
  detail::write_net_blobs<S>(os, b.dvf_a);
  detail::write_net_blobs<S>(os, b.dvf_b);
  os.flush();
  check(bool(os), "bundle: write to '" + path + "' failed");
}

template <class S>
TrainedBundle<S> load_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), "bundle: cannot open '" + path + "'");
  char magic[4] = {};
  is.read(magic, 4);
  check(bool(is) && std::memcmp(magic, detail::kBundleMagic, 4) == 0,
        "bundle: '" + path + "' is not a bundle file (bad magic)");
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  check(bool(is), "bundle: truncated file");
  check(version == detail::kBundleVersion,
        "bundle: unsupported version " + std::to_string(version) + " (expected " +
            std::to_string(detail::kBundleVersion) + ")");
  uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 8);
  check(bool(is), "bundle: truncated file");
  std::string hs(len, '\0');
  is.read(hs.data(), std::streamsize(len));
  check(bool(is), "bundle: truncated file (header)");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument("bundle: corrupt header in '" + path + "'");
  }
  check(header["scalar_bytes"].get<size_t>() == sizeof(S),
        "bundle: scalar width mismatch (file stores " +
            std::to_string(header["scalar_bytes"].get<size_t>()) + "-byte floats)");

  TrainedBundle<S> b = build_bundle<S>(pipeline_config_from_json(header["config"]));
  b.best_epoch = header["best_epoch"].get<int>();
  b.num_workers = header["num_workers"].get<int>();
  detail::read_net_blobs<S>(is, b.seg1, header["nets"]["seg1"], "seg1");
  detail::read_net_blobs<S>(is, b.seg2, header["nets"]["seg2"], "seg2");
  detail::read_net_blobs<S>(is, b.dvf_a, header["nets"]["dvf_a"], "dvf_a");
  detail::read_net_blobs<S>(is, b.dvf_b, header["nets"]["dvf_b"], "dvf_b");
  is.peek();
  check(is.eof(), "bundle: trailing bytes in '" + path + "' (corrupt file)");
  return b;
}

}  // namespace lithoseg
