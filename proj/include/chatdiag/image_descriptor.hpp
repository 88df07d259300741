#pragma once

#include <future>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>

#include "chatdiag/core_model.hpp"
#include "chatdiag/text.hpp"

namespace chatdiag {

// Maps an image locator to descriptive text. Throws DescriptorError on failure.
class ImageTextProvider {
public:
    virtual ~ImageTextProvider() = default;
    virtual std::string describe(const std::string& uri) const = 0;
};

struct DescriptorBackend {
    std::shared_ptr<const ImageTextProvider> caption_provider;
    std::shared_ptr<const ImageTextProvider> ocr_provider;
    // Per-image provider calls in flight at once; 1 = sequential.
    std::size_t max_parallel = 1;
};

// Canned answers keyed by uri; unknown uris fail.
class ScriptedImageProvider : public ImageTextProvider {
public:
    explicit ScriptedImageProvider(std::map<std::string, std::string> table) : table_(std::move(table)) {}

    std::string describe(const std::string& uri) const override {
        auto it = table_.find(uri);
        if (it == table_.end()) throw DescriptorError("no scripted description for " + uri);
        return it->second;
    }

private:
    std::map<std::string, std::string> table_;
};

struct RemoteDescriptorConfig {
    std::string base_url;  // scheme://host:port
    std::string path = "/describe";
    int timeout_seconds = 30;
};

// One POST per image: {"uri": ..., "task": "caption"|"ocr"} -> {"text": ...}.
class RemoteImageProvider : public ImageTextProvider {
public:
    RemoteImageProvider(RemoteDescriptorConfig config, std::string task)
        : config_(std::move(config)), task_(std::move(task)) {}

    std::string describe(const std::string& uri) const override {
        httplib::Client client(config_.base_url);
        client.set_connection_timeout(config_.timeout_seconds);
        client.set_read_timeout(config_.timeout_seconds);
        json body = {{"uri", uri}, {"task", task_}};
        auto res = client.Post(config_.path, body.dump(), "application/json");
        if (!res) throw DescriptorError(task_ + " request failed for " + uri + ": " + httplib::to_string(res.error()));
        if (res->status != 200)
            throw DescriptorError(task_ + " service returned HTTP " + std::to_string(res->status) + " for " + uri);
        try {
            auto reply = json::parse(res->body);
            return reply.at("text").get<std::string>();
        } catch (const json::exception& e) {
            throw DescriptorError(task_ + " service reply malformed: " + std::string(e.what()));
        }
    }

private:
    RemoteDescriptorConfig config_;
    std::string task_;
};

inline DescriptorBackend make_remote_descriptor(const RemoteDescriptorConfig& config) {
    return {std::make_shared<RemoteImageProvider>(config, "caption"),
            std::make_shared<RemoteImageProvider>(config, "ocr"), 4};
}

namespace detail {

struct ImageJob {
    std::size_t post = 0;
    std::size_t image = 0;
    std::string uri;
};

struct ImageResult {
    std::string caption;
    std::string ocr_text;
    std::vector<std::string> warnings;
};

inline ImageResult run_image_job(const ImageJob& job, const DescriptorBackend& backend) {
    ImageResult r;
    auto call = [&](const std::shared_ptr<const ImageTextProvider>& provider, const char* what,
                    std::string& out) {
        if (!provider) return;
        try {
            out = provider->describe(job.uri);
        } catch (const std::exception& e) {
            out.clear();
            r.warnings.push_back(std::string(what) + " failed for image " + job.uri + ": " + e.what());
        }
    };
    call(backend.caption_provider, "caption", r.caption);
    call(backend.ocr_provider, "ocr", r.ocr_text);
    return r;
}

}  // namespace detail

// Fills caption/ocr_text for images that only carry a uri. Images already
// described pass through untouched, so the operation is idempotent. Provider
// failures leave an empty field and append to `warnings`.
inline UserTimeline describe(const UserTimeline& timeline, const DescriptorBackend& backend,
                             std::vector<std::string>* warnings = nullptr) {
    UserTimeline out = timeline;
    std::vector<detail::ImageJob> jobs;
    for (std::size_t p = 0; p < out.posts.size(); ++p)
        for (std::size_t i = 0; i < out.posts[p].images.size(); ++i) {
            const auto& img = out.posts[p].images[i];
            if (img.uri && !img.caption && !img.ocr_text) jobs.push_back({p, i, *img.uri});
        }
    if (jobs.empty()) return out;

    std::vector<detail::ImageResult> results(jobs.size());
    const std::size_t width = std::max<std::size_t>(1, backend.max_parallel);
    for (std::size_t start = 0; start < jobs.size(); start += width) {
        const std::size_t end = std::min(jobs.size(), start + width);
        if (width == 1) {
            results[start] = detail::run_image_job(jobs[start], backend);
            continue;
        }
        std::vector<std::future<detail::ImageResult>> batch;
        for (std::size_t j = start; j < end; ++j)
            batch.push_back(std::async(std::launch::async, detail::run_image_job, std::cref(jobs[j]),
                                       std::cref(backend)));
        for (std::size_t j = start; j < end; ++j) results[j] = batch[j - start].get();
    }

    // Merge in (post, image) order regardless of completion order.
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        auto& img = out.posts[jobs[j].post].images[jobs[j].image];
        img.caption = results[j].caption;
        img.ocr_text = results[j].ocr_text;
        if (warnings)
            for (auto& w : results[j].warnings) warnings->push_back(std::move(w));
    }
    return out;
}

// Post text followed by " [image: caption]" and " [image-text: ocr]" for
// every non-empty descriptor field, in image order.
inline std::string render_post_text(const Post& post) {
    std::string out = post.text;
    auto append = [&](std::string_view tag, const std::optional<std::string>& field) {
        if (!field || field->empty()) return;
        if (!out.empty()) out.push_back(' ');
        out += "[";
        out += tag;
        out += ": ";
        out += *field;
        out += "]";
    };
    for (const auto& img : post.images) {
        append("image", img.caption);
        append("image-text", img.ocr_text);
    }
    return out;
}

}  // namespace chatdiag
