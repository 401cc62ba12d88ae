#include "ncx/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "ncx/serialize.hpp"

namespace ncx {

namespace {
constexpr std::string_view kCheckpointMagic = "NCXCKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void NcRegressionConfig::validate() const {
  if (input_dim == 0 || enc_layers == 0 || dec_layers == 0 || model_dim == 0 || heads == 0)
    throw ContractError("NcRegressionConfig: all dimensions must be >= 1");
  if (model_dim % heads != 0)
    throw ContractError("NcRegressionConfig: model_dim not divisible by heads");
}

void NcClassificationConfig::validate() const {
  if (input_dim == 0 || enc_layers == 0 || dec_layers == 0 || model_dim == 0 || heads == 0)
    throw ContractError("NcClassificationConfig: all dimensions must be >= 1");
  if (classes < 2) throw ContractError("NcClassificationConfig: need at least 2 classes");
  if (model_dim % heads != 0)
    throw ContractError("NcClassificationConfig: model_dim not divisible by heads");
}

void HypothesisEval::validate() const {
  const std::size_t m = x_tr.rows, mt = x_te.rows;
  if (m == 0) throw ContractError("HypothesisEval: empty train context");
  if (mt == 0) throw ContractError("HypothesisEval: empty test context");
  if (x_tr.cols != x_te.cols) throw DimensionError("HypothesisEval: train/test width mismatch");
  if (y_tr.rows != m || pred_tr.rows != m || pred_te.rows != mt)
    throw DimensionError("HypothesisEval: row counts inconsistent with X");
  if (kind == TaskKind::kRegression) {
    if (y_tr.cols != 1 || pred_tr.cols != 1 || pred_te.cols != 1)
      throw DimensionError("HypothesisEval: regression labels/predictions must be single-column");
  } else {
    if (y_tr.cols < 2 || pred_tr.cols != y_tr.cols || pred_te.cols != y_tr.cols)
      throw DimensionError("HypothesisEval: classification label/prediction widths inconsistent");
    if (!train_loss_per_example || train_loss_per_example->rows != m ||
        train_loss_per_example->cols != 1)
      throw ContractError("HypothesisEval: classification eval needs an m×1 per-example train loss");
    for (std::size_t i = 0; i < m; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < y_tr.cols; ++j) {
        const double v = y_tr(i, j);
        if (std::fabs(v) > 1e-9 && std::fabs(v - 1.0) > 1e-9)
          throw ContractError("HypothesisEval: Y_tr row " + std::to_string(i) +
                              " is not one-hot (entry " + std::to_string(v) + ")");
        row_sum += v;
      }
      if (std::fabs(row_sum - 1.0) > 1e-9)
        throw ContractError("HypothesisEval: Y_tr row " + std::to_string(i) +
                            " is not one-hot (sum " + std::to_string(row_sum) + ")");
    }
  }
}

NcModel NcModel::init_regression(const NcRegressionConfig& cfg, Rng& rng) {
  cfg.validate();
  NcModel m;
  m.kind_ = TaskKind::kRegression;
  m.reg_cfg_ = cfg;
  const std::size_t d = cfg.model_dim;

  MlpConfig enc;
  enc.input_dim = cfg.input_dim + 1;  // rows are [x ‖ h(x)]
  enc.hidden_dims.assign(cfg.enc_layers, d);
  enc.output_dim = d;
  m.encoder_ = Mlp::init(enc, rng, "enc");

  AttentionConfig att;
  att.model_dim = d;
  att.num_heads = cfg.heads;
  att.value_dim = d + 1;  // V = [e_tr ‖ Y_tr]
  m.cross_ = MultiHeadAttention::init(att, rng, "cross");

  MlpConfig dec;
  dec.input_dim = d;
  dec.hidden_dims.assign(cfg.dec_layers, d);
  dec.output_dim = 1;
  m.decoder_ = Mlp::init(dec, rng, "dec");
  return m;
}

NcModel NcModel::init_classification(const NcClassificationConfig& cfg, Rng& rng) {
  cfg.validate();
  NcModel m;
  m.kind_ = TaskKind::kClassification;
  m.cls_cfg_ = cfg;
  const std::size_t d = cfg.model_dim;

  MlpConfig enc;
  enc.input_dim = cfg.input_dim + cfg.classes;  // rows are [x ‖ h(x)]
  enc.hidden_dims.assign(cfg.enc_layers, d);
  enc.output_dim = d;
  m.encoder_ = Mlp::init(enc, rng, "enc");

  AttentionConfig self_att;
  self_att.model_dim = d;
  self_att.num_heads = cfg.heads;
  self_att.value_dim = d;
  for (std::size_t i = 0; i < cfg.self_attention_layers; ++i)
    m.self_layers_.push_back(
        MultiHeadAttention::init(self_att, rng, "self" + std::to_string(i)));

  m.bilinear_ = BilinearWeights::init(d, cfg.classes, rng, "bilinear.w");

  AttentionConfig att;
  att.model_dim = d;
  att.num_heads = cfg.heads;
  att.value_dim = d;  // V comes out of the bilinear layer
  m.cross_ = MultiHeadAttention::init(att, rng, "cross");

  MlpConfig dec;
  dec.input_dim = d;
  dec.hidden_dims.assign(cfg.dec_layers, d);
  dec.output_dim = 1;
  m.decoder_ = Mlp::init(dec, rng, "dec");
  return m;
}

void NcModel::check_eval(const HypothesisEval& ev) const {
  ev.validate();
  if (ev.kind != kind_)
    throw ContractError("NcModel: eval kind does not match model variant");
  const std::size_t want =
      kind_ == TaskKind::kRegression ? reg_cfg_.input_dim : cls_cfg_.input_dim;
  if (ev.x_tr.cols != want)
    throw DimensionError("NcModel: eval input width " + std::to_string(ev.x_tr.cols) +
                         " does not match configured " + std::to_string(want));
  if (kind_ == TaskKind::kClassification && ev.y_tr.cols != cls_cfg_.classes)
    throw DimensionError("NcModel: eval classes " + std::to_string(ev.y_tr.cols) +
                         " does not match configured " + std::to_string(cls_cfg_.classes));
}

NcModel::BatchTensors NcModel::assemble(std::span<const HypothesisEval> evals) const {
  if (evals.empty()) throw ContractError("NcModel: empty batch");
  BatchTensors b;
  std::size_t ntr = 0, nte = 0;
  for (const auto& ev : evals) {
    check_eval(ev);
    b.m_tr.push_back(ev.x_tr.rows);
    b.m_te.push_back(ev.x_te.rows);
    ntr += ev.x_tr.rows;
    nte += ev.x_te.rows;
  }
  const std::size_t xw = evals[0].x_tr.cols, pw = evals[0].pred_tr.cols;
  const std::size_t enc_w = xw + pw, yw = evals[0].y_tr.cols;

  std::vector<double> etr(ntr * enc_w), ete(nte * enc_w), ytr(ntr * yw);
  std::vector<double> lpe(kind_ == TaskKind::kClassification ? ntr : 0);
  std::size_t rtr = 0, rte = 0;
  for (const auto& ev : evals) {
    for (std::size_t i = 0; i < ev.x_tr.rows; ++i, ++rtr) {
      double* row = etr.data() + rtr * enc_w;
      for (std::size_t j = 0; j < xw; ++j) row[j] = ev.x_tr(i, j);
      for (std::size_t j = 0; j < pw; ++j) row[xw + j] = ev.pred_tr(i, j);
      for (std::size_t j = 0; j < yw; ++j) ytr[rtr * yw + j] = ev.y_tr(i, j);
      if (!lpe.empty()) lpe[rtr] = (*ev.train_loss_per_example)(i, 0);
    }
    for (std::size_t i = 0; i < ev.x_te.rows; ++i, ++rte) {
      double* row = ete.data() + rte * enc_w;
      for (std::size_t j = 0; j < xw; ++j) row[j] = ev.x_te(i, j);
      for (std::size_t j = 0; j < pw; ++j) row[xw + j] = ev.pred_te(i, j);
    }
  }
  b.enc_tr = make_tensor({ntr, enc_w}, std::move(etr));
  b.enc_te = make_tensor({nte, enc_w}, std::move(ete));
  b.y_tr = make_tensor({ntr, yw}, std::move(ytr));
  if (!lpe.empty()) b.loss_pe = make_tensor({ntr, 1}, std::move(lpe));
  return b;
}

NcModel::BatchTensors NcModel::assemble(const EvalTensors& ev) const {
  if (ev.kind != kind_) throw ContractError("NcModel: eval kind does not match model variant");
  if (!ev.x_tr || !ev.x_te || !ev.y_tr || !ev.pred_tr || !ev.pred_te)
    throw ContractError("NcModel: EvalTensors has null fields");
  if (ev.x_tr->rows() == 0) throw ContractError("NcModel: empty train context");
  if (ev.x_te->rows() == 0) throw ContractError("NcModel: empty test context");
  BatchTensors b;
  b.enc_tr = concat_cols(ev.x_tr, ev.pred_tr);
  b.enc_te = concat_cols(ev.x_te, ev.pred_te);
  b.y_tr = ev.y_tr;
  if (kind_ == TaskKind::kClassification) {
    if (!ev.train_loss_per_example)
      throw ContractError("NcModel: classification EvalTensors needs per-example train loss");
    b.loss_pe = ev.train_loss_per_example;
  }
  b.m_tr = {ev.x_tr->rows()};
  b.m_te = {ev.x_te->rows()};
  return b;
}

TensorPtr NcModel::pipeline(const BatchTensors& b) const {
  const std::size_t ntr = b.enc_tr->rows(), nte = b.enc_te->rows();
  TensorPtr e = encoder_.forward(concat_rows(b.enc_tr, b.enc_te));
  TensorPtr e_tr = slice_rows(e, 0, ntr);
  TensorPtr e_te = slice_rows(e, ntr, ntr + nte);

  TensorPtr v;
  if (kind_ == TaskKind::kClassification) {
    for (const auto& layer : self_layers_)
      e_tr = layer.forward_grouped(e_tr, e_tr, e_tr, b.m_tr, b.m_tr);
    // ones column acts as a residual path for e_tr through the bilinear form
    TensorPtr ones = make_tensor({ntr, 1}, std::vector<double>(ntr, 1.0));
    TensorPtr labels_aug = concat_cols(concat_cols(b.y_tr, ones), b.loss_pe);
    v = bilinear_forward(*bilinear_, e_tr, labels_aug);
  } else {
    v = concat_cols(e_tr, b.y_tr);
  }

  TensorPtr att = cross_.forward_grouped(e_te, e_tr, v, b.m_te, b.m_tr);
  TensorPtr dec = decoder_.forward(att);
  return group_mean(dec, b.m_te);
}

TensorPtr NcModel::value(const EvalTensors& ev) const { return pipeline(assemble(ev)); }

TensorPtr NcModel::forward_batch(std::span<const HypothesisEval> evals) const {
  return pipeline(assemble(evals));
}

double NcModel::forward(const HypothesisEval& ev) const {
  return forward_batch(std::span<const HypothesisEval>(&ev, 1))->value();
}

std::vector<double> NcModel::predict(std::span<const HypothesisEval> evals) const {
  std::vector<double> out;
  out.reserve(evals.size());
  constexpr std::size_t kChunk = 128;
  for (std::size_t i = 0; i < evals.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, evals.size() - i);
    TensorPtr nc = forward_batch(evals.subspan(i, n));
    out.insert(out.end(), nc->data.begin(), nc->data.end());
  }
  return out;
}

double NcModel::predict_clipped(const HypothesisEval& ev, double floor) const {
  return std::max(forward(ev), floor);
}

double NcModel::training_step(OptimizerState& opt, std::span<const HypothesisEval> batch,
                              std::span<const double> gaps) {
  if (batch.empty()) throw ContractError("training_step: empty batch");
  if (gaps.size() != batch.size())
    throw ContractError("training_step: gaps/batch size mismatch");
  TensorPtr nc = forward_batch(batch);
  TensorPtr gap_t =
      make_tensor({batch.size(), 1}, std::vector<double>(gaps.begin(), gaps.end()));
  TensorPtr loss = mean(huber(sub(gap_t, nc)));
  const double pre = loss->value();
  if (std::isnan(pre)) throw NumericError("training_step: NaN meta loss");
  auto params = parameters();
  zero_grad(params);
  backward(loss);
  optimizer_step(opt, params);
  return pre;
}

std::vector<TensorPtr> NcModel::parameters() const {
  std::vector<TensorPtr> out = encoder_.parameters();
  for (const auto& layer : self_layers_)
    for (const auto& p : layer.parameters()) out.push_back(p);
  if (bilinear_) out.push_back(bilinear_->w);
  for (const auto& p : cross_.parameters()) out.push_back(p);
  for (const auto& p : decoder_.parameters()) out.push_back(p);
  return out;
}

namespace {
TensorPtr copy_param(const TensorPtr& p) {
  return make_tensor(p->shape, p->data, p->requires_grad, p->name);
}

Mlp copy_mlp(const Mlp& src) {
  Mlp out;
  out.cfg = src.cfg;
  for (const auto& w : src.weights) out.weights.push_back(copy_param(w));
  for (const auto& b : src.biases) out.biases.push_back(copy_param(b));
  return out;
}

MultiHeadAttention copy_mha(const MultiHeadAttention& src) {
  MultiHeadAttention out;
  out.cfg = src.cfg;
  out.wq = copy_param(src.wq);
  out.bq = copy_param(src.bq);
  out.wk = copy_param(src.wk);
  out.wv = copy_param(src.wv);
  out.bv = copy_param(src.bv);
  out.wo = copy_param(src.wo);
  out.bo = copy_param(src.bo);
  return out;
}
}  // namespace

NcModel NcModel::clone() const {
  NcModel out;
  out.kind_ = kind_;
  out.reg_cfg_ = reg_cfg_;
  out.cls_cfg_ = cls_cfg_;
  out.encoder_ = copy_mlp(encoder_);
  out.decoder_ = copy_mlp(decoder_);
  out.cross_ = copy_mha(cross_);
  for (const auto& layer : self_layers_) out.self_layers_.push_back(copy_mha(layer));
  if (bilinear_) {
    BilinearWeights b;
    b.dim = bilinear_->dim;
    b.classes = bilinear_->classes;
    b.w = copy_param(bilinear_->w);
    out.bilinear_ = std::move(b);
  }
  return out;
}

void NcModel::save(const std::filesystem::path& path) const {
  BinaryWriter w(path);
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.u8(kind_ == TaskKind::kRegression ? 0 : 1);
  if (kind_ == TaskKind::kRegression) {
    w.u64(reg_cfg_.input_dim);
    w.u64(reg_cfg_.enc_layers);
    w.u64(reg_cfg_.dec_layers);
    w.u64(reg_cfg_.model_dim);
    w.u64(reg_cfg_.heads);
  } else {
    w.u64(cls_cfg_.input_dim);
    w.u64(cls_cfg_.classes);
    w.u64(cls_cfg_.enc_layers);
    w.u64(cls_cfg_.dec_layers);
    w.u64(cls_cfg_.model_dim);
    w.u64(cls_cfg_.heads);
    w.u64(cls_cfg_.self_attention_layers);
  }
  const auto params = parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->shape.size()));
    for (std::size_t d : p->shape) w.u64(d);
    w.f64_array(p->data);
  }
  w.finish();
}

NcModel NcModel::load(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.verify_crc_trailer();
  r.expect_magic(kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint '" + path.string() + "': unsupported version " +
                      std::to_string(version) + " at offset " + std::to_string(r.offset() - 4));
  const std::uint8_t kind = r.u8();

  Rng scratch(0);  // structure only; every parameter is overwritten below
  NcModel model;
  if (kind == 0) {
    NcRegressionConfig cfg;
    cfg.input_dim = r.u64();
    cfg.enc_layers = r.u64();
    cfg.dec_layers = r.u64();
    cfg.model_dim = r.u64();
    cfg.heads = r.u64();
    model = init_regression(cfg, scratch);
  } else if (kind == 1) {
    NcClassificationConfig cfg;
    cfg.input_dim = r.u64();
    cfg.classes = r.u64();
    cfg.enc_layers = r.u64();
    cfg.dec_layers = r.u64();
    cfg.model_dim = r.u64();
    cfg.heads = r.u64();
    cfg.self_attention_layers = r.u64();
    model = init_classification(cfg, scratch);
  } else {
    throw FormatError("checkpoint '" + path.string() + "': unknown variant " +
                      std::to_string(kind));
  }

  std::map<std::string, TensorPtr> by_name;
  for (const auto& p : model.parameters()) by_name[p->name] = p;

  const std::uint32_t count = r.u32();
  if (count != by_name.size())
    throw FormatError("checkpoint '" + path.string() + "': expected " +
                      std::to_string(by_name.size()) + " parameters, file has " +
                      std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint32_t nd = r.u32();
    std::vector<std::size_t> shape(nd);
    for (auto& d : shape) d = r.u64();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError("checkpoint '" + path.string() + "': unknown parameter '" + name + "'");
    if (it->second->shape != shape)
      throw FormatError("checkpoint '" + path.string() + "': shape mismatch for '" + name + "'");
    it->second->data = r.f64_array(it->second->size());
  }
  return model;
}

}  // namespace ncx
