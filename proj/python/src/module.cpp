#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "amlhp/dataset.hpp"
#include "amlhp/error.hpp"
#include "amlhp/model.hpp"
#include "amlhp/packet.hpp"
#include "amlhp/train.hpp"

namespace py = pybind11;
using namespace amlhp;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

pkt::LinkType link_from(const std::string& name) {
  if (name == "ethernet") return pkt::LinkType::Ethernet;
  if (name == "raw") return pkt::LinkType::RawIPv4;
  throw Error(ErrorKind::UnsupportedLinkType, "link must be 'ethernet' or 'raw', got '" + name + "'");
}

pkt::PacketRecord parse(const py::bytes& frame, const std::string& link, bool anonymize) {
  const std::string_view view = frame;
  const auto* p = reinterpret_cast<const std::uint8_t*>(view.data());
  auto rec = pkt::parse_packet({p, view.size()}, link_from(link));
  return anonymize ? pkt::anonymize(std::move(rec)) : rec;
}

template <typename T>
py::array_t<T> to_numpy(const std::vector<std::size_t>& shape, const T* src) {
  py::array_t<T> out(shape);
  std::memcpy(out.mutable_data(), src, out.size() * sizeof(T));
  return out;
}

// (B, n) float array -> (B, 1, n) tensor.
Tensor<float> input_tensor(const F32Array& a, const char* what) {
  if (a.ndim() != 2) throw Error(ErrorKind::ShapeMismatch, std::string(what) + " must be a 2-D array");
  Tensor<float> t({static_cast<std::size_t>(a.shape(0)), 1, static_cast<std::size_t>(a.shape(1))});
  std::memcpy(t.data(), a.data(), t.size() * sizeof(float));
  return t;
}

py::dict report_dict(const train::EvalReport& r) {
  py::dict d;
  d["acc"] = r.acc;
  d["macro_pr"] = r.macro_pr;
  d["macro_rc"] = r.macro_rc;
  d["macro_f1"] = r.macro_f1;
  d["loss"] = r.loss;
  d["confusion"] = to_numpy<std::uint64_t>({r.num_classes, r.num_classes}, r.confusion.data());
  py::list per_class;
  for (const auto& c : r.per_class) {
    py::dict m;
    m["precision"] = c.precision;
    m["recall"] = c.recall;
    m["f1"] = c.f1;
    m["support"] = c.support;
    per_class.append(m);
  }
  d["per_class"] = per_class;
  d["flags"] = r.flags;
  return d;
}

data::Dataset dataset_from(const U8Array& headers, const U8Array& payloads, const py::array_t<std::uint16_t>& labels,
                           std::size_t num_classes) {
  if (headers.ndim() != 2 || headers.shape(1) != 128 || payloads.ndim() != 2 || labels.ndim() != 1 ||
      headers.shape(0) != payloads.shape(0) || headers.shape(0) != labels.shape(0))
    throw Error(ErrorKind::ShapeMismatch, "expected headers (n, 128), payloads (n, P) and labels (n,)");
  data::Dataset ds;
  ds.num_classes = num_classes;
  ds.payload_len = static_cast<std::size_t>(payloads.shape(1));
  ds.headers.assign(headers.data(), headers.data() + headers.size());
  ds.payloads.assign(payloads.data(), payloads.data() + payloads.size());
  ds.labels.assign(labels.data(), labels.data() + labels.size());
  for (auto l : ds.labels)
    if (l >= num_classes) throw Error(ErrorKind::ShapeMismatch, "label " + std::to_string(l) + " out of range");
  return ds;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Header-payload packet classifier";

  // Messages start with the error kind, e.g. "ShapeMismatch: ...".
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  m.def(
      "header_vector",
      [](const py::bytes& frame, const std::string& link, bool anonymize) {
        const auto h = pkt::build_header_vector(parse(frame, link, anonymize));
        return to_numpy<std::uint8_t>({h.bytes.size()}, h.bytes.data());
      },
      py::arg("frame"), py::arg("link") = "ethernet", py::arg("anonymize") = true,
      "128-byte header representation of one frame (uint8 array).");

  m.def(
      "payload_vector",
      [](const py::bytes& frame, std::size_t payload_len, const std::string& link) {
        const auto d = pkt::build_payload_vector(parse(frame, link, false), payload_len);
        return to_numpy<std::uint8_t>({d.bytes.size()}, d.bytes.data());
      },
      py::arg("frame"), py::arg("payload_len") = 64, py::arg("link") = "ethernet",
      "First payload_len payload bytes, zero padded (uint8 array).");

  m.def(
      "load_dataset",
      [](const std::filesystem::path& path) {
        const auto ds = data::load_dataset(path);
        const std::size_t n = ds.size();
        return py::make_tuple(to_numpy<std::uint8_t>({n, 128}, ds.headers.data()),
                              to_numpy<std::uint8_t>({n, ds.payload_len}, ds.payloads.data()),
                              to_numpy<std::uint16_t>({n}, ds.labels.data()), ds.num_classes);
      },
      py::arg("path"), "Reads a record file into (headers, payloads, labels, num_classes).");

  m.def(
      "synthesize",
      [](const std::filesystem::path& out, std::size_t per_class, double noise, std::uint64_t seed) {
        return data::synthesize(data::standard_spec(per_class, noise), seed, out).class_names;
      },
      py::arg("out"), py::arg("per_class") = 1000, py::arg("noise") = 0.02, py::arg("seed") = 42,
      "Writes the standard five-class synthetic set as a record file; returns the class names.");

  m.def(
      "metrics",
      [](std::size_t num_classes, const std::vector<std::uint16_t>& truth, const std::vector<std::uint16_t>& pred) {
        if (truth.size() != pred.size()) throw Error(ErrorKind::ShapeMismatch, "truth and pred differ in length");
        return report_dict(train::report_from_predictions(num_classes, truth, pred));
      },
      py::arg("num_classes"), py::arg("truth"), py::arg("pred"));

  py::class_<Model>(m, "Model")
      .def(py::init([](std::size_t num_classes, std::size_t payload_len, std::uint64_t seed) {
             ModelConfig c;
             c.num_classes = num_classes;
             c.payload_len = payload_len;
             c.validate();
             Model model(c);
             model.init(seed);
             return model;
           }),
           py::arg("num_classes"), py::arg("payload_len") = 64, py::arg("seed") = 42)
      .def_static("load", [](const std::filesystem::path& p) { return load_weights(p); }, py::arg("path"))
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_weights(self, p); }, py::arg("path"))
      .def_property_readonly("num_classes", [](const Model& self) { return self.config().num_classes; })
      .def_property_readonly("payload_len", [](const Model& self) { return self.config().payload_len; })
      .def(
          "forward",
          [](const Model& self, const F32Array& header, const F32Array& payload) {
            const auto logits = self.forward(input_tensor(header, "header"), input_tensor(payload, "payload"));
            return to_numpy<float>(logits.shape(), logits.data());
          },
          py::arg("header"), py::arg("payload"),
          "Logits (B, K) for byte features in [0, 1]: header (B, 128), payload (B, P).")
      .def(
          "evaluate",
          [](const Model& self, const U8Array& headers, const U8Array& payloads, const py::array_t<std::uint16_t>& labels) {
            return report_dict(train::evaluate(self, dataset_from(headers, payloads, labels, self.config().num_classes)));
          },
          py::arg("headers"), py::arg("payloads"), py::arg("labels"))
      .def("resources", [](const Model& self) {
        const auto r = count_resources(self);
        py::dict d;
        d["params"] = r.params;
        d["flops"] = r.flops;
        d["model_size_bytes"] = r.model_size_bytes;
        return d;
      });

  m.def(
      "train",
      [](const U8Array& headers, const U8Array& payloads, const py::array_t<std::uint16_t>& labels,
         std::size_t num_classes, std::size_t epochs, std::size_t batch_size, double lr, std::uint64_t seed) {
        const auto ds = dataset_from(headers, payloads, labels, num_classes);
        ModelConfig c;
        c.num_classes = num_classes;
        c.payload_len = ds.payload_len;
        train::TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.lr = lr;
        tc.seed = seed;
        py::gil_scoped_release release;
        return train::train(ds, nullptr, c, tc).model;
      },
      py::arg("headers"), py::arg("payloads"), py::arg("labels"), py::arg("num_classes"), py::arg("epochs") = 10,
      py::arg("batch_size") = 128, py::arg("lr") = 1e-2, py::arg("seed") = 42,
      "Trains a model with Adam on uint8 header/payload arrays.");
}
